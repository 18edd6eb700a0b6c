"""Collusion-channel inference from the pirated trace and side information.

The hard estimator maximises the exact log-likelihood over the box
``Theta_cmax``; the soft estimators fit the two AWGN mixture models by
expectation-maximisation and keep whichever explains the data better.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import TextIO

import numpy as np
from scipy.optimize import minimize

from .codegen import CodeMatrix
from .collusion import CollusionChannel, SoftChannel
from .errors import FormatError, ParameterError
from .scoring import generic_basis

DENSITY_FLOOR = 1e-300
NOISE_FLOOR = 1e-4
EM_MAX_ITER = 200
EM_TOL = 1e-10
SCREEN_ITER = 12


@dataclass(frozen=True)
class SideInfo:
    """Codewords of already accused users, summarised by ``delta = sum_j x_j``."""

    users: tuple
    delta: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "users", tuple(int(j) for j in self.users))
        d = np.ascontiguousarray(self.delta, dtype=np.int64)
        if d.ndim != 1:
            raise ParameterError("delta must be one-dimensional")
        if d.size and (d.min() < 0 or d.max() > len(self.users)):
            raise ParameterError("delta entries must lie in [0, n_si]")
        d.setflags(write=False)
        object.__setattr__(self, "delta", d)

    @property
    def n_si(self) -> int:
        return len(self.users)

    @classmethod
    def empty(cls, m: int) -> "SideInfo":
        return cls((), np.zeros(m, dtype=np.int64))

    @classmethod
    def from_users(cls, code: CodeMatrix, users) -> "SideInfo":
        users = tuple(int(j) for j in users)
        if len(set(users)) != len(users):
            raise ParameterError("side-information users must be distinct")
        return cls(users, code.column_sums(users))

    def extended(self, code: CodeMatrix, more) -> "SideInfo":
        return SideInfo.from_users(code, list(self.users) + [int(j) for j in more])


@dataclass(frozen=True)
class ChannelEstimate:
    theta_hat: CollusionChannel
    loglik: float
    iterations: int = 0
    converged: bool = True
    history: tuple = field(default=(), repr=False)
    message: str = ""

    @property
    def c_max(self) -> int:
        return self.theta_hat.c


@dataclass(frozen=True)
class SoftEstimate:
    chosen: SoftChannel
    loglik_I: float
    loglik_II: float
    fit_I: SoftChannel = field(repr=False)
    fit_II: SoftChannel = field(repr=False)
    floored_I: bool = False
    floored_II: bool = False

    @property
    def model(self) -> str:
        return self.chosen.model

    @property
    def noise_var(self) -> dict:
        return {"I": self.fit_I.noise_var, "II": self.fit_II.noise_var}

    @property
    def c_max(self) -> int:
        return self.chosen.c

    @property
    def floored(self) -> bool:
        return self.floored_I if self.chosen.model == "I" else self.floored_II


def _check(length: int, p: np.ndarray, si: SideInfo | None, c_max: int) -> SideInfo:
    if p.shape[0] != length:
        raise ParameterError(f"trace length {length} != secret length {p.shape[0]}")
    si = SideInfo.empty(length) if si is None else si
    if si.delta.shape[0] != length:
        raise ParameterError("side-information length mismatch")
    if si.n_si >= c_max:
        raise ParameterError(f"no free colluders left to infer: n_si={si.n_si} >= c_max={c_max}")
    return si


def _secret(p) -> np.ndarray:
    return np.asarray(getattr(p, "p", p), dtype=np.float64)


def hard_loglik(y, p, si: SideInfo | None, theta) -> float:
    """``sum_i log Pr{y(i) | delta(i), n_si, p(i), theta}``."""
    theta = np.asarray(getattr(theta, "theta", theta), dtype=np.float64)
    p = _secret(p)
    y = np.asarray(y, dtype=bool)
    si = SideInfo.empty(p.shape[0]) if si is None else si
    basis = generic_basis(si.delta, si.n_si, p, theta.shape[0] - 1)
    prob = np.where(y, basis @ theta, basis @ (1.0 - theta))
    return float(np.log(np.maximum(prob, DENSITY_FLOOR)).sum())


def mle_hard(y, p, si: SideInfo | None, c_max: int) -> ChannelEstimate:
    """Maximum-likelihood channel in ``Theta_cmax`` given the side information.

    The likelihood is log-concave in ``theta`` (each factor is linear), so a
    bounded quasi-Newton method from the interleaving channel suffices.

    Raises
    ------
    ParameterError
        If ``n_si >= c_max``: every colluder is already identified.
    """
    p = _secret(p)
    y = np.asarray(y, dtype=bool)
    si = _check(y.shape[0], p, si, c_max)
    basis = generic_basis(si.delta, si.n_si, p, c_max)
    ones = y
    # Aggregate identical (row, y) pairs cheaply: positions with y=0 use the
    # mirrored probability B @ (1 - theta), kept separate for precision.
    b1 = basis[ones]
    b0 = basis[~ones]
    fixed1 = b1[:, c_max]
    fixed0 = b0[:, 0]
    free1 = b1[:, 1:c_max]
    free0 = b0[:, 1:c_max]

    def negll(x):
        pr1 = free1 @ x + fixed1
        pr0 = free0 @ (1.0 - x) + fixed0
        pr1 = np.maximum(pr1, DENSITY_FLOOR)
        pr0 = np.maximum(pr0, DENSITY_FLOOR)
        f = -(np.log(pr1).sum() + np.log(pr0).sum())
        g = -(free1.T @ (1.0 / pr1) - free0.T @ (1.0 / pr0))
        return f, g

    x0 = np.arange(1, c_max) / c_max
    history = [-negll(x0)[0]]

    def record(xk):
        history.append(-negll(xk)[0])

    res = minimize(negll, x0, jac=True, method="L-BFGS-B", bounds=[(0.0, 1.0)] * (c_max - 1),
                   callback=record, options={"ftol": 1e-13, "gtol": 1e-9, "maxiter": 1000})
    x = np.clip(res.x, 0.0, 1.0)
    ll = -negll(x)[0]
    return ChannelEstimate(CollusionChannel.from_free(x), float(ll), int(res.nit), bool(res.success),
                           tuple(history), str(res.message))


def known_channel(channel: CollusionChannel) -> ChannelEstimate:
    """Wrap a known channel as an estimate (oracle decoding)."""
    return ChannelEstimate(channel, float("nan"), 0, True, (), "oracle")


def hard_threshold(y_soft) -> np.ndarray:
    """Quantise ``y'`` to 0 below zero and 1 otherwise."""
    return (np.asarray(y_soft, dtype=np.float64) >= 0.0).astype(np.uint8)


# -- soft models -------------------------------------------------------------------

def _log_prior(p, si: SideInfo, c_max: int) -> np.ndarray:
    """``log Pr{K = k}`` for the total count ``K = delta(i) + Binomial(c_max - n_si, p(i))``."""
    basis = generic_basis(si.delta, si.n_si, p, c_max)
    with np.errstate(divide="ignore"):
        return np.log(basis)


def _normal_logpdf(y, mean, var):
    return -0.5 * np.log(2.0 * np.pi * var) - (y - mean) ** 2 / (2.0 * var)


def _logsumexp(a, axis):
    top = np.max(a, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    return np.squeeze(top, axis=axis) + np.log(np.sum(np.exp(a - top), axis=axis))


def _soft_loglik_terms(model: str, params, var, y, logprior):
    """Per-position log mixture densities and the joint log-weights used by E-M."""
    if model == "I":
        joint = logprior + _normal_logpdf(y[:, None], params[None, :], var)
    else:
        with np.errstate(divide="ignore"):
            lt, lf = np.log(params), np.log1p(-params)
        up = logprior + lt[None, :] + _normal_logpdf(y[:, None], 1.0, var)
        down = logprior + lf[None, :] + _normal_logpdf(y[:, None], -1.0, var)
        joint = np.stack([up, down], axis=2)
    flat = joint.reshape(joint.shape[0], -1)
    per = _logsumexp(flat, axis=1)
    per = np.maximum(per, math.log(DENSITY_FLOOR))
    return per, joint


def soft_loglik(channel: SoftChannel, y, p, si: SideInfo | None = None) -> float:
    p = _secret(p)
    y = np.asarray(y, dtype=np.float64)
    si = SideInfo.empty(p.shape[0]) if si is None else si
    per, _ = _soft_loglik_terms(channel.model, channel.params, channel.noise_var, y,
                                _log_prior(p, si, channel.c))
    return float(per.sum())


def _em_step(model: str, y, logprior, params, var, c_max: int):
    """One E-M update; returns ``(params', var', loglik at the input point)``."""
    per, joint = _soft_loglik_terms(model, params, var, y, logprior)
    resp = np.exp(joint - per.reshape((-1,) + (1,) * (joint.ndim - 1)))
    params = params.copy()
    if model == "I":
        mass = resp.sum(axis=0)
        num = resp.T @ y
        with np.errstate(invalid="ignore", divide="ignore"):
            mu = np.where(mass > 0, num / mass, params)
        params[1:c_max] = np.clip(mu[1:c_max], -1.0, 1.0)
        var = float(np.sum(resp * (y[:, None] - params[None, :]) ** 2) / y.shape[0])
    else:
        up = resp[:, :, 0].sum(axis=0)
        mass = up + resp[:, :, 1].sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            th = np.where(mass > 0, up / mass, params)
        params[1:c_max] = np.clip(th[1:c_max], 0.0, 1.0)
        r_up = resp[:, :, 0].sum(axis=1)
        var = float(np.sum(r_up * (y - 1.0) ** 2 + (1.0 - r_up) * (y + 1.0) ** 2) / y.shape[0])
    return params, var, float(per.sum())


def _em(model: str, y, logprior, params, var, c_max: int, max_iter: int = EM_MAX_ITER):
    """E-M with SQUAREM extrapolation (Varadhan and Roland, 2008).

    Each cycle costs up to three E-M steps; an extrapolated point is kept only
    if it does not lower the likelihood, so the ascent stays monotone. Returns
    ``(params, var, loglik, floored, steps)``.
    """
    lo, hi = (-1.0, 1.0) if model == "I" else (0.0, 1.0)

    def pack(par, v):
        return np.concatenate((par[1:c_max], [v]))

    def unpack(x):
        par = params.copy()
        par[1:c_max] = np.clip(x[:-1], lo, hi)
        return par, max(float(x[-1]), NOISE_FLOOR)

    def step(par, v):
        par2, v2, ll = _em_step(model, y, logprior, par, v, c_max)
        return par2, max(v2, NOISE_FLOOR), ll

    steps = 0
    prev = -np.inf
    par, v = params.copy(), float(var)
    while steps < max_iter:
        par1, v1, ll0 = step(par, v)
        par2, v2, ll1 = step(par1, v1)
        steps += 2
        x0, x1, x2 = pack(par, v), pack(par1, v1), pack(par2, v2)
        r = x1 - x0
        d = (x2 - x1) - r
        nr, nd = np.linalg.norm(r), np.linalg.norm(d)
        cand = None
        if nd > 0 and nr > 0:
            alpha = min(-1.0, -nr / nd)
            cand = unpack(x0 - 2.0 * alpha * r + alpha * alpha * d)
        best = (par2, v2)
        if cand is not None:
            par3, v3, ll3 = step(*cand)
            steps += 1
            ll2 = float(_soft_loglik_terms(model, par2, v2, y, logprior)[0].sum())
            if ll3 >= ll2:
                best = (par3, v3)
        par, v = best
        if ll0 - prev < EM_TOL * max(1.0, abs(ll0)) and ll1 - ll0 < EM_TOL * max(1.0, abs(ll0)):
            break
        prev = ll0
    per, _ = _soft_loglik_terms(model, par, v, y, logprior)
    return par, v, float(per.sum()), v <= NOISE_FLOOR, steps


def _starts(model: str, c_max: int) -> list[np.ndarray]:
    """Four starting points, closed under the relabelling ``theta(k) -> 1 - theta(c - k)``."""
    k = np.arange(c_max + 1) / c_max
    tilt = np.clip(k + 0.25 * np.sin(np.pi * k), 0.0, 1.0)
    if model == "II":
        starts = [k, np.full(c_max + 1, 0.5), tilt, 1.0 - tilt[::-1]]
        for s in starts:
            s[0], s[-1] = 0.0, 1.0
    else:
        avg = 2.0 * k - 1.0
        bent = 2.0 * tilt - 1.0
        starts = [avg, np.zeros(c_max + 1), bent, -bent[::-1]]
        for s in starts:
            s[0], s[-1] = -1.0, 1.0
    return [np.array(s, dtype=np.float64) for s in starts]


def _fit_model(model: str, y, logprior, c_max: int):
    var0 = max(float(np.var(y)) * 0.5, 0.05)
    best = None
    for start in _starts(model, c_max):
        params, var, ll, floored, _ = _em(model, y, logprior, start, var0, c_max, SCREEN_ITER)
        if best is None or ll > best[2] + 1e-9 * max(1.0, abs(ll)):
            best = (params, var, ll, floored)
    params, var, ll, floored, _ = _em(model, y, logprior, best[0], best[1], c_max)
    return SoftChannel(model, c_max, params, var), ll, floored


def fit_soft(y_soft, p, si: SideInfo | None, c_max: int) -> SoftEstimate:
    """Fit model I (means ``mu``) and model II (hard channel ``theta``), both with
    AWGN, and keep the one with the higher likelihood.

    Both models have ``c_max`` parameters, so raw likelihoods are compared.
    """
    p = _secret(p)
    y = np.asarray(y_soft, dtype=np.float64)
    si = _check(y.shape[0], p, si, c_max)
    logprior = _log_prior(p, si, c_max)
    fit1, ll1, fl1 = _fit_model("I", y, logprior, c_max)
    fit2, ll2, fl2 = _fit_model("II", y, logprior, c_max)
    chosen = fit1 if ll1 > ll2 else fit2
    return SoftEstimate(chosen, ll1, ll2, fit1, fit2, fl1, fl2)


# -- text format -----------------------------------------------------------------
#
#   model hard|I|II
#   c_max <int>
#   theta <c_max+1 values>     (hard and II)   or   mu <values>   (I)
#   noise_var <float>          (I and II)
#   loglik <float>             (optional)

def channel_to_text(estimate) -> str:
    if isinstance(estimate, SoftEstimate):
        ch, ll = estimate.chosen, estimate.loglik_I if estimate.model == "I" else estimate.loglik_II
    elif isinstance(estimate, ChannelEstimate):
        ch, ll = estimate.theta_hat, estimate.loglik
    else:
        ch, ll = estimate, None
    lines = []
    if isinstance(ch, SoftChannel):
        lines.append(f"model {ch.model}")
        lines.append(f"c_max {ch.c}")
        key = "mu" if ch.model == "I" else "theta"
        lines.append(key + " " + " ".join(f"{v:.12g}" for v in ch.params))
        lines.append(f"noise_var {ch.noise_var:.12g}")
    else:
        lines.append("model hard")
        lines.append(f"c_max {ch.c}")
        lines.append("theta " + " ".join(f"{v:.12g}" for v in ch.theta))
    if ll is not None and not math.isnan(ll):
        lines.append(f"loglik {ll:.12g}")
    return "\n".join(lines) + "\n"


def channel_from_text(text: str):
    """Parse :func:`channel_to_text` output into a channel object."""
    fields_ = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, rest = line.partition(" ")
        fields_[key] = (lineno, rest.split())
    try:
        model = fields_["model"][1][0]
        c = int(fields_["c_max"][1][0])
        if model == "hard":
            return CollusionChannel([float(v) for v in fields_["theta"][1]])
        key = "mu" if model == "I" else "theta"
        params = [float(v) for v in fields_[key][1]]
        return SoftChannel(model, c, params, float(fields_["noise_var"][1][0]))
    except (KeyError, IndexError, ValueError, ParameterError) as exc:
        raise FormatError(f"malformed channel text: {exc}") from None


def write_channel(fh: TextIO, estimate) -> None:
    fh.write(channel_to_text(estimate))
