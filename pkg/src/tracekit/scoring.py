"""Decoder scores.

Every score here is linear in the positions: a weight table ``W[phi, i]``
is built once from the trace, and the score of a codeword (or of a
``t``-subset with accumulated column counts ``phi``) is ``sum_i W[phi(i), i]``.
Scores use natural logarithms.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence, TextIO

import numpy as np

from . import kernels
from .codegen import CodeMatrix
from .collusion import CollusionChannel, SoftChannel, soft_density
from .errors import ParameterError

PROB_FLOOR = 1e-300


def generic_prob(u, v: int, p, theta) -> np.ndarray | float:
    """Probability that ``Y = 1`` given that ``v`` identified colluders hold
    ``u`` ones and the remaining ``c - v`` draw their symbols from Bernoulli(p).

    ``theta`` is either a length ``c + 1`` vector or a per-position table of
    shape ``(m, c + 1)`` aligned with ``p``; the result is linear in ``theta``.

    Examples
    --------
    >>> generic_prob(1, 1, 0.5, [0.0, 0.5, 1.0])
    0.75
    """
    theta = np.asarray(getattr(theta, "theta", theta), dtype=np.float64)
    c = theta.shape[-1] - 1
    scalar = np.ndim(u) == 0 and np.ndim(p) == 0 and theta.ndim == 1
    u = np.asarray(u, dtype=np.int64)
    p = np.asarray(p, dtype=np.float64)
    if not 0 <= v <= c:
        raise ParameterError(f"conditioned colluders v={v} outside [0, {c}]")
    if u.size and (u.min() < 0 or u.max() > v):
        raise ParameterError(f"ones held u must lie in [0, v={v}]")
    free = c - v
    u, p = np.broadcast_arrays(u, p)
    out = np.zeros(u.shape, dtype=np.float64)
    q = 1.0 - p
    for j in range(free + 1):
        coef = math.comb(free, j) * p**j * q ** (free - j)
        if theta.ndim == 1:
            vals = theta[u + j]
        else:
            vals = np.take_along_axis(theta, (u + j)[..., None], axis=-1)[..., 0]
        out += vals * coef
    return float(out) if scalar else out


def generic_basis(u, v: int, p, c: int) -> np.ndarray:
    """Coefficients ``B`` with ``generic_prob(u, v, p, theta) = B @ theta``; shape ``(m, c + 1)``."""
    u = np.atleast_1d(np.asarray(u, dtype=np.int64))
    p = np.atleast_1d(np.asarray(p, dtype=np.float64))
    u, p = np.broadcast_arrays(u, p)
    free = c - v
    out = np.zeros((u.shape[0], c + 1))
    rows = np.arange(u.shape[0])
    q = 1.0 - p
    for j in range(free + 1):
        out[rows, u + j] = math.comb(free, j) * p**j * q ** (free - j)
    return out


def emission_table(model, y) -> np.ndarray:
    """Per-position ``Pr{observed y(i) | k ones among all c colluders}``, shape ``(m, c + 1)``.

    Hard traces use ``theta`` or its mirror ``1 - theta``; soft traces use the
    model density at ``y'(i)``, scaled per position (the scale cancels in every
    weight).
    """
    model = _resolve_model(model)
    y = np.asarray(y)
    if isinstance(model, SoftChannel):
        dens = soft_density(model.model, model.params, model.noise_var, y.astype(np.float64))
        top = dens.max(axis=1, keepdims=True)
        scale = np.where(top > 0, top, 1.0)
        return np.maximum(dens / scale, PROB_FLOOR)
    theta = model.theta
    return np.where(np.asarray(y, dtype=bool)[:, None], theta[None, :], 1.0 - theta[None, :])


def _resolve_model(model):
    for attr in ("theta_hat", "chosen"):
        if hasattr(model, attr):
            return getattr(model, attr)
    if isinstance(model, (CollusionChannel, SoftChannel)):
        return model
    return CollusionChannel(model)


@dataclass(frozen=True)
class WeightMatrix:
    """``w[phi, i]`` for ``phi = 0..t``; natural-log likelihood ratios."""

    w: np.ndarray
    t: int
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        w = np.ascontiguousarray(self.w, dtype=np.float64)
        if w.ndim != 2 or w.shape[0] != self.t + 1:
            raise ParameterError(f"weight matrix must have shape (t+1, m), got {w.shape} for t={self.t}")
        if not np.all(np.isfinite(w)):
            raise ParameterError("weights must be finite")
        w.setflags(write=False)
        object.__setattr__(self, "w", w)

    @property
    def m(self) -> int:
        return self.w.shape[1]

    @property
    def table(self) -> np.ndarray:
        """Position-major copy ``(m, t + 1)`` used by the kernels."""
        return np.ascontiguousarray(self.w.T)


def build_weights(y, p, estimate, si=None, t: int = 1) -> WeightMatrix:
    """Weights ``log P(y(i) | phi, t, delta(i), n_si) / P(y(i) | delta(i), n_si)``."""
    p = np.asarray(getattr(p, "p", p), dtype=np.float64)
    y = np.asarray(getattr(y, "hard", y) if not isinstance(y, np.ndarray) else y)
    if y.shape[0] != p.shape[0]:
        raise ParameterError(f"trace length {y.shape[0]} != secret length {p.shape[0]}")
    model = _resolve_model(estimate)
    c_max = model.c
    n_si = 0 if si is None else si.n_si
    delta = np.zeros(p.shape[0], dtype=np.int64) if si is None else np.asarray(si.delta, dtype=np.int64)
    if t < 1:
        raise ParameterError("subset size t must be >= 1")
    if t + n_si > c_max:
        raise ParameterError(
            f"cannot score {t}-subsets with {n_si} side-information users under c_max={c_max}")
    table = emission_table(model, y)
    den = np.maximum(generic_prob(delta, n_si, p, table), PROB_FLOOR)
    w = np.empty((t + 1, p.shape[0]))
    for phi in range(t + 1):
        num = np.maximum(generic_prob(delta + phi, t + n_si, p, table), PROB_FLOOR)
        w[phi] = np.log(num) - np.log(den)
    meta = {"c_max": c_max, "n_si": n_si,
            "kind": "soft" if isinstance(model, SoftChannel) else "hard"}
    return WeightMatrix(w, t, meta)


def symmetric_weights(y, p) -> WeightMatrix:
    """Single weights of the symmetric Tardos score (Skoric et al.)."""
    p = np.asarray(getattr(p, "p", p), dtype=np.float64)
    y = np.asarray(y, dtype=bool)
    a = np.sqrt((1.0 - p) / p)
    b = np.sqrt(p / (1.0 - p))
    w1 = np.where(y, a, -a)
    w0 = np.where(y, -b, b)
    return WeightMatrix(np.vstack([w0, w1]), 1, {"kind": "symmetric"})


def compound_weights(y, p, worst_set: dict) -> list[WeightMatrix]:
    """One single-decoder table per worst-case channel ``theta*_k``."""
    if not worst_set:
        raise ParameterError("compound decoder needs at least one worst-case channel")
    out = []
    for k in sorted(worst_set):
        ch = worst_set[k]
        if ch is None:
            raise ParameterError(f"missing worst-case channel for k={k}")
        wm = build_weights(y, p, ch, None, 1)
        out.append(WeightMatrix(wm.w, 1, {"kind": "compound", "k": k}))
    return out


@dataclass(frozen=True)
class ScoreList:
    """Scores aligned with ``ids`` (user indices, or rows of subset members)."""

    ids: np.ndarray
    scores: np.ndarray

    def __post_init__(self):
        ids = np.asarray(self.ids, dtype=np.int64)
        scores = np.asarray(self.scores, dtype=np.float64)
        if ids.shape[0] != scores.shape[0]:
            raise ParameterError("ids and scores differ in length")
        object.__setattr__(self, "ids", ids)
        object.__setattr__(self, "scores", scores)

    def __len__(self):
        return self.scores.shape[0]

    def as_dict(self) -> dict:
        return {int(i): float(s) for i, s in zip(self.ids, self.scores)}


@dataclass(frozen=True)
class SubsetBest:
    """Bookkeeping of a joint stage.

    ``best_subset[r]`` is the highest-scoring subset containing ``users[r]``
    and ``best_score[r]`` its score; ``counts[r]`` is how many of those recorded
    subsets contain ``users[r]``.
    """

    users: np.ndarray
    best_score: np.ndarray
    best_subset: np.ndarray
    counts: np.ndarray
    top_subset: tuple
    top_score: float
    enumerated: int

    def count_of(self, user: int) -> int:
        hit = np.nonzero(self.users == user)[0]
        return int(self.counts[hit[0]]) if hit.size else 0

    def ranked(self, subset=None) -> list[int]:
        """Members of ``subset`` (default: the top subset) by decreasing count, then index."""
        subset = self.top_subset if subset is None else subset
        return sorted((int(j) for j in subset), key=lambda j: (-self.count_of(j), j))


def _users(code: CodeMatrix, users) -> np.ndarray:
    if users is None:
        return np.arange(code.n, dtype=np.int64)
    users = np.asarray(users, dtype=np.int64).ravel()
    if users.size and (users.min() < 0 or users.max() >= code.n):
        raise ParameterError("user index out of range")
    return users


def score_single(code: CodeMatrix, users, W: WeightMatrix) -> ScoreList:
    if W.t != 1:
        raise ParameterError("single scores need a t=1 weight matrix")
    if W.m != code.m:
        raise ParameterError(f"weight length {W.m} != code length {code.m}")
    users = _users(code, users)
    packed = code.packed_rows(users)
    return ScoreList(users, kernels.single_scores(packed, np.ascontiguousarray(W.w[0]),
                                                  np.ascontiguousarray(W.w[1])))


def score_compound(code: CodeMatrix, users, y, p, worst_set: dict) -> ScoreList:
    tables = compound_weights(y, p, worst_set)
    users = _users(code, users)
    best = None
    for W in tables:
        s = score_single(code, users, W).scores
        best = s if best is None else np.maximum(best, s)
    return ScoreList(users, best)


def score_symmetric(code: CodeMatrix, users, y, p) -> ScoreList:
    return score_single(code, users, symmetric_weights(y, p))


def max_subsets(t: int, budget: float) -> int:
    """Largest suspect-list size ``n`` with ``C(n, t) <= budget``."""
    if t < 1 or budget < 1:
        raise ParameterError("need t >= 1 and budget >= 1")
    n = t
    while math.comb(n + 1, t) <= budget:
        n += 1
        if n > 10**7:
            break
    return n


def score_subsets(code: CodeMatrix, suspects, W: WeightMatrix, budget: float = 4.5e6,
                  record_all: bool = False) -> tuple[ScoreList | None, SubsetBest]:
    """Score every ``t``-subset of ``suspects`` in revolving-door order.

    Returns the full subset score list when ``record_all`` (ids are rows of
    ``t`` user indices, in enumeration order) and the :class:`SubsetBest`.
    """
    t = W.t
    suspects = np.asarray(suspects, dtype=np.int64).ravel()
    s = suspects.shape[0]
    if len(set(suspects.tolist())) != s:
        raise ParameterError("suspects must be distinct")
    if not 1 <= t <= s:
        raise ParameterError(f"need 1 <= t={t} <= number of suspects {s}")
    total = math.comb(s, t)
    if total > budget:
        raise ParameterError(f"{total} subsets exceed the budget of {budget:g}; shrink the suspect list")
    if W.m != code.m:
        raise ParameterError(f"weight length {W.m} != code length {code.m}")
    rows = np.ascontiguousarray(code.rows(suspects))
    ubest, usub, gbest, gsub, allsc, done = kernels.subset_scores(rows, W.table, t, record_all)
    usub = np.asarray(usub)
    members = suspects[usub]
    counts = np.bincount(usub.ravel(), minlength=s).astype(np.int64)
    best = SubsetBest(
        users=suspects, best_score=np.asarray(ubest), best_subset=members, counts=counts,
        top_subset=tuple(int(v) for v in np.sort(suspects[np.asarray(gsub)])),
        top_score=float(gbest), enumerated=int(done),
    )
    scores = None
    if record_all:
        order = np.array([sub for sub, _, _ in kernels.fallback.revolving_door(s, t)], dtype=np.int64)
        scores = ScoreList(np.sort(suspects[order], axis=1), np.asarray(allsc))
    return scores, best


def top_suspects(scores: ScoreList, n_keep: int, counts: dict | None = None) -> np.ndarray:
    """The ``n_keep`` best ids, best first.

    Selection runs in linear time; only the kept entries are sorted. Ties at
    the cut go to the higher appearance count, then to the lower index.
    """
    if n_keep < 1:
        raise ParameterError("n_keep must be >= 1")
    ids, sc = scores.ids, scores.scores
    n = sc.shape[0]
    if n_keep >= n:
        pick = np.arange(n)
    else:
        kth = n - n_keep
        cut = np.partition(sc, kth)[kth]
        above = np.nonzero(sc > cut)[0]
        tied = np.nonzero(sc == cut)[0]
        need = n_keep - above.shape[0]
        tied = np.array(sorted(tied, key=lambda r: (-_count(counts, ids[r]), ids[r])), dtype=np.int64)
        pick = np.concatenate([above, tied[:need]])
    order = sorted(pick, key=lambda r: (-sc[r], -_count(counts, ids[r]), ids[r]))
    return ids[np.asarray(order, dtype=np.int64)]


def _count(counts, user) -> int:
    return 0 if counts is None else int(counts.get(int(user), 0))


def write_scores_csv(fh: TextIO, scores: ScoreList) -> None:
    """CSV dump ``id,score`` (subset members joined by ``;``), in list order."""
    writer = csv.writer(fh, lineterminator="\n")
    writer.writerow(["id", "score"])
    for ident, s in zip(scores.ids, scores.scores):
        label = ";".join(str(int(v)) for v in np.atleast_1d(ident))
        writer.writerow([label, repr(float(s))])


def naive_subset_score(code: CodeMatrix, members: Sequence[int], W: WeightMatrix) -> float:
    """Reference implementation: recompute ``phi`` from scratch."""
    phi = code.column_sums(list(members))
    return float(W.w[phi, np.arange(code.m)].sum())
