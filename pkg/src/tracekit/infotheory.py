"""Achievable rates of single and joint decoders, worst-case channels, and a
numeric check that an equivalence class of channels is one-sided.

Rates are in bits per code symbol. Expectations over the bias ``P ~ f`` use
Gauss-Legendre quadrature in ``u`` with ``p = F^{-1}(u)``; for the arcsine
law this is ``p = sin^2(pi u / 2)``, which never evaluates the density
singularities at 0 and 1.
"""
from __future__ import annotations

import functools
import logging
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import xlogy

from .codegen import get_distribution
from .collusion import CollusionChannel, elevate
from .errors import ParameterError

log = logging.getLogger(__name__)

LN2 = math.log(2.0)
DEFAULT_NODES = 128
N_STARTS = 8


@dataclass(frozen=True)
class RateQuery:
    channel: CollusionChannel
    dist: str = "tardos"
    subset_size: int = 1
    quadrature: int = DEFAULT_NODES

    def __post_init__(self):
        if not isinstance(self.channel, CollusionChannel):
            object.__setattr__(self, "channel", CollusionChannel(self.channel))
        if not 1 <= self.subset_size <= self.channel.c:
            raise ParameterError(f"subset size {self.subset_size} outside [1, c={self.channel.c}]")
        if self.quadrature < 3:
            raise ParameterError("quadrature needs at least 3 nodes")
        get_distribution(self.dist)


@functools.lru_cache(maxsize=256)
def _design(dist: str, c: int, ell: int, nodes: int):
    """Linear maps from ``theta`` to ``Pr{Y=1 | Phi=phi, p}`` at every node.

    Returns ``(weights[Q], prior[Q, ell+1], A[Q, ell+1, c+1], B0[Q, c+1])``
    where ``prior`` is the Binomial(ell, p) law of ``Phi`` and ``B0`` gives the
    unconditioned output probability.
    """
    p, w = get_distribution(dist).quadrature(nodes)
    q = 1.0 - p
    free = c - ell
    A = np.zeros((nodes, ell + 1, c + 1))
    for phi in range(ell + 1):
        for j in range(free + 1):
            A[:, phi, phi + j] = math.comb(free, j) * p**j * q ** (free - j)
    prior = np.stack([math.comb(ell, f) * p**f * q ** (ell - f) for f in range(ell + 1)], axis=1)
    B0 = np.stack([math.comb(c, k) * p**k * q ** (c - k) for k in range(c + 1)], axis=1)
    for arr in (w, prior, A, B0):
        arr.setflags(write=False)
    return w, prior, A, B0


def _h(a, b):
    """Binary entropy in bits from ``a`` and its separately computed complement ``b``."""
    return -(xlogy(a, a) + xlogy(b, b)) / LN2


def _hprime(a, b):
    return (np.log(np.maximum(b, 1e-300)) - np.log(np.maximum(a, 1e-300))) / LN2


def _rate_and_grad(theta: np.ndarray, dist: str, ell: int, nodes: int, grad: bool):
    c = theta.shape[0] - 1
    w, prior, A, B0 = _design(dist, c, ell, nodes)
    comp = 1.0 - theta
    a = A @ theta
    b = A @ comp
    q1 = B0 @ theta
    q0 = B0 @ comp
    info = _h(q1, q0) - np.sum(prior * _h(a, b), axis=1)
    rate = float(w @ info) / ell
    if not grad:
        return rate, None
    g_out = _hprime(q1, q0)[:, None] * B0
    g_cond = np.einsum("qf,qf,qfk->qk", prior, _hprime(a, b), A)
    return rate, (w @ (g_out - g_cond)) / ell


def rate_single(q: RateQuery) -> float:
    """``R_S = E_P[I(X; Y | P)]`` for one colluder's symbol ``X``."""
    return _rate_and_grad(q.channel.theta, q.dist, 1, q.quadrature, False)[0]


def rate_joint(q: RateQuery) -> float:
    """``R_J = E_P[I(Phi; Y | P)] / ell`` for the count ``Phi`` over ``ell`` colluders."""
    return _rate_and_grad(q.channel.theta, q.dist, q.subset_size, q.quadrature, False)[0]


def rate_gradient(channel: CollusionChannel, ell: int = 1, dist: str = "tardos",
                  nodes: int = DEFAULT_NODES) -> np.ndarray:
    """Gradient of the rate with respect to the free coordinates ``theta(1..c-1)``."""
    return _rate_and_grad(channel.theta, dist, ell, nodes, True)[1][1:-1]


def projected_gradient(x: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Projected gradient on the box ``[0, 1]^d`` (zero at a constrained minimum)."""
    pg = np.array(g, dtype=np.float64)
    lo = x <= 0.0
    hi = x >= 1.0
    pg[lo] = np.minimum(pg[lo], 0.0)
    pg[hi] = np.maximum(pg[hi], 0.0)
    return pg


@dataclass(frozen=True)
class WorstResult:
    channel: CollusionChannel
    rate: float
    pg_norm: float
    converged: bool
    starts: int


_MEMO: dict[tuple, WorstResult] = {}


def search_worst(dist: str, c: int, mode: str = "single", ell: int | None = None,
                 nodes: int = DEFAULT_NODES) -> WorstResult:
    """Minimise the selected rate over ``Theta_c`` from several deterministic starts."""
    if c < 2:
        raise ParameterError("worst-case search needs c >= 2")
    if mode not in ("single", "joint"):
        raise ParameterError(f"mode must be 'single' or 'joint', got {mode!r}")
    ell = 1 if mode == "single" else (c if ell is None else int(ell))
    if not 1 <= ell <= c:
        raise ParameterError(f"subset size {ell} outside [1, {c}]")
    key = (dist, c, mode, ell, nodes)
    if key in _MEMO:
        return _MEMO[key]

    def fun(x):
        theta = np.concatenate(([0.0], x, [1.0]))
        r, g = _rate_and_grad(theta, dist, ell, nodes, True)
        return r, g[1:-1]

    d = c - 1
    phi = np.arange(1, c) / c
    rng = np.random.default_rng(c * 1000 + ell)
    starts = [phi, np.full(d, 0.5), (phi >= 0.5).astype(float) * 0.9 + 0.05, 1.0 - phi]
    while len(starts) < N_STARTS:
        starts.append(rng.uniform(0.05, 0.95, d))
    bounds = [(0.0, 1.0)] * d
    best = None
    for x0 in starts:
        res = minimize(fun, x0, jac=True, method="L-BFGS-B", bounds=bounds,
                       options={"ftol": 1e-16, "gtol": 1e-12, "maxiter": 5000, "maxcor": 20})
        x = np.clip(res.x, 0.0, 1.0)
        r, g = fun(x)
        if best is None or r < best[0]:
            best = (r, x, g)
    r, x, g = best
    pg = float(np.linalg.norm(projected_gradient(x, g)))
    converged = pg < 1e-6
    if not converged:
        log.warning("worst-case search for c=%d (%s, ell=%d) stopped with projected gradient %.2e",
                    c, mode, ell, pg)
    result = WorstResult(CollusionChannel.from_free(x), r, pg, converged, len(starts))
    _MEMO[key] = result
    return result


def worst_channel(dist, c: int, mode: str = "single", ell: int | None = None) -> CollusionChannel:
    """The channel in ``Theta_c`` minimising ``R_S`` (single) or ``R_J`` (joint).

    For the joint mode ``ell`` defaults to ``c``.
    """
    dist = getattr(dist, "name", dist)
    _load_env_cache()
    return search_worst(dist, c, mode, ell).channel


def worst_set(c_max: int, dist: str = "tardos") -> dict[int, CollusionChannel]:
    """``{k: theta*_k}`` for ``k = 2..c_max``, the compound decoder's family."""
    return {k: worst_channel(dist, k, "single") for k in range(2, c_max + 1)}


# -- cache file ----------------------------------------------------------------
#
#   one line per entry:  c mode theta(0) ... theta(c)   (12 significant digits)
#   mode is "single" or "joint" (joint with ell = c) or "joint:ell".
#   Lines starting with '#' are comments.

_ENV_CACHE = "TRACEKIT_WORST_CACHE"
_env_loaded: set = set()


def _mode_tag(mode: str, ell: int, c: int) -> str:
    if mode == "single" or ell == c:
        return mode
    return f"joint:{ell}"


def write_worst_cache(path: str, entries=None) -> int:
    """Write memoised worst-case channels; returns the number of lines written."""
    entries = _MEMO if entries is None else entries
    lines = ["# c mode theta(0..c)"]
    for (dist, c, mode, ell, nodes), res in sorted(entries.items(), key=lambda kv: (kv[0][1], kv[0][2], kv[0][3])):
        if dist != "tardos" or nodes != DEFAULT_NODES:
            continue
        vals = " ".join(f"{v:.12g}" for v in res.channel.theta)
        lines.append(f"{c} {_mode_tag(mode, ell, c)} {vals}")
    with open(path, "w", encoding="ascii") as fh:
        fh.write("\n".join(lines) + "\n")
    return len(lines) - 1


def read_worst_cache(path: str) -> int:
    """Load cache lines into the in-memory table; returns the number of entries."""
    from .errors import FormatError

    count = 0
    with open(path, encoding="ascii") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            try:
                c = int(parts[0])
                tag = parts[1]
                theta = np.array([float(v) for v in parts[2:]])
            except (ValueError, IndexError):
                raise FormatError(f"malformed worst-channel cache line {lineno}") from None
            if theta.shape[0] != c + 1:
                raise FormatError(f"cache line {lineno}: expected {c + 1} values")
            mode, _, ell = tag.partition(":")
            ell = 1 if mode == "single" else (int(ell) if ell else c)
            ch = CollusionChannel(np.clip(theta, 0.0, 1.0))
            r, g = _rate_and_grad(ch.theta, "tardos", ell, DEFAULT_NODES, True)
            pg = float(np.linalg.norm(projected_gradient(ch.theta[1:-1], g[1:-1])))
            _MEMO[("tardos", c, mode, ell, DEFAULT_NODES)] = WorstResult(ch, r, pg, pg < 1e-6, 0)
            count += 1
    return count


def _load_env_cache():
    path = os.environ.get(_ENV_CACHE)
    if path and path not in _env_loaded and os.path.exists(path):
        read_worst_cache(path)
        _env_loaded.add(path)


# -- one-sidedness of an equivalence class ---------------------------------------

@dataclass(frozen=True)
class OneSidedReport:
    k_grid: np.ndarray
    g_min: np.ndarray
    rates: np.ndarray

    @property
    def rates_decreasing(self) -> bool:
        return bool(np.all(np.diff(self.rates) < 0))


def bernstein_derivative(theta: np.ndarray, p: np.ndarray) -> np.ndarray:
    """``d/dp sum_k theta(k) C(c,k) p^k (1-p)^(c-k)``."""
    theta = np.asarray(theta, dtype=np.float64)
    c = theta.shape[0] - 1
    p = np.asarray(p, dtype=np.float64)
    out = np.zeros_like(p)
    for k in range(c):
        out += (theta[k + 1] - theta[k]) * math.comb(c - 1, k) * p**k * (1 - p) ** (c - 1 - k)
    return c * out


def one_sided_gap(q, dq, p, k: int, c_max: int) -> np.ndarray:
    """Integrand ``g(p)`` of ``R(theta_k) - D(theta_k || theta_cmax) - R(theta_cmax)``.

    Each of the four bracketed terms has the form ``x log(1 + gamma x)`` with
    ``gamma > 0`` and is therefore non-negative.
    """
    q = np.asarray(q, dtype=np.float64)
    dq = np.asarray(dq, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    r = 1.0 - q
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = (dq * np.log1p((1 - p) * dq / (c_max * q))
                 + dq * np.log1p(p * dq / (c_max * r))
                 - dq * np.log1p(-(1 - p) * dq / (c_max * r))
                 - dq * np.log1p(-p * dq / (c_max * q)))
    terms = np.where(dq == 0.0, 0.0, terms)
    return (1.0 / k - 1.0 / c_max) * p * (1 - p) * terms


def one_sided_check(base: CollusionChannel, c_max: int, grid: int = 1001,
                    dist: str = "tardos", nodes: int = DEFAULT_NODES) -> OneSidedReport:
    """Elevate ``base`` to every size ``k = c..c_max`` and report ``min_p g(p)`` and ``R_S``."""
    if base.c > c_max:
        raise ParameterError(f"base channel size {base.c} exceeds c_max={c_max}")
    p = (np.arange(grid) + 0.5) / grid
    q = base.prob_one(p)
    dq = bernstein_derivative(base.theta, p)
    ks, gmin, rates = [], [], []
    for k in range(base.c, c_max + 1):
        member = elevate(base, k)
        ks.append(k)
        gmin.append(float(np.min(one_sided_gap(q, dq, p, k, c_max))))
        rates.append(rate_single(RateQuery(member, dist, 1, nodes)))
    return OneSidedReport(np.array(ks), np.array(gmin), np.array(rates))


def mean_entropy_closed_form() -> float:
    """``E[h_b(P)]`` in bits for the arcsine law: ``2 - 1/ln 2``."""
    return 2.0 - 1.0 / LN2
