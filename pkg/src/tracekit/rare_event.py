"""Accusation thresholds for rare false-positive targets by adaptive splitting.

The last-particle algorithm keeps ``N`` particles (fresh innocent ``t``-tuples
of codewords). At each level the lowest particle is discarded and replaced by
a clone of a random survivor, which is then re-randomised by an MCMC kernel
that leaves the code distribution restricted to ``{score > level}``
invariant. After ``k`` levels the survival probability is
``(1 - 1/N)^k``, so the level reached after
``k_hat = ceil(log(alpha) / log(1 - 1/N))`` steps estimates the
``1 - alpha`` quantile. The level count is asymptotically Poisson with mean
``-N log(alpha)``, which gives the confidence interval.

Mutation kernel: single-site updates in a systematic scan (a cursor over
``(codeword, position)`` that persists across levels). Each proposal draws a
fresh ``Bernoulli(p_i)`` bit and is accepted iff the score stays above the
current level. ``sweeps`` sets the number of proposals per level in units of
``t * m``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.stats import norm

from . import kernels
from ._rng import Stream, derive_key
from .errors import ConvergenceError, ParameterError
from .scoring import WeightMatrix

DEFAULT_PARTICLES = 1000
DEFAULT_CONFIDENCE = 0.95
DEFAULT_SWEEPS = 1.0


@dataclass(frozen=True)
class ThresholdRequest:
    """What to calibrate.

    Either ``weights`` (one or more weight matrices sharing ``t``; the score
    is the maximum over them) with the secret ``p``, or an additive
    ``surrogate``: a vectorised inverse CDF mapping uniforms to per-coordinate
    contributions, summed over ``m`` coordinates.
    """

    target_prob: float
    weights: tuple = ()
    p: np.ndarray | None = None
    particles: int = DEFAULT_PARTICLES
    sweeps: float = DEFAULT_SWEEPS
    confidence: float = DEFAULT_CONFIDENCE
    surrogate: Callable | None = None
    m: int = 0

    def __post_init__(self):
        if not 0.0 < self.target_prob < 1.0:
            raise ParameterError("target probability must lie in (0, 1)")
        if self.particles < 2:
            raise ParameterError("need at least 2 particles")
        if not 0.0 < self.confidence < 1.0:
            raise ParameterError("confidence must lie in (0, 1)")
        if self.sweeps <= 0:
            raise ParameterError("sweeps must be positive")
        if isinstance(self.weights, WeightMatrix):
            object.__setattr__(self, "weights", (self.weights,))
        else:
            object.__setattr__(self, "weights", tuple(self.weights))
        if self.surrogate is None:
            if not self.weights:
                raise ParameterError("a threshold request needs weights or a surrogate score")
            ts = {w.t for w in self.weights}
            if len(ts) != 1:
                raise ParameterError("all weight matrices must share the subset size")
            if self.p is None:
                raise ParameterError("weights need the secret bias vector")
            p = np.ascontiguousarray(getattr(self.p, "p", self.p), dtype=np.float64)
            if any(w.m != p.shape[0] for w in self.weights):
                raise ParameterError("weight length does not match the secret")
            object.__setattr__(self, "p", p)
        elif self.m < 1:
            raise ParameterError("surrogate scores need m >= 1 coordinates")

    @property
    def t(self) -> int:
        return self.weights[0].t if self.weights else 1


@dataclass(frozen=True)
class ThresholdEstimate:
    tau_hat: float
    tau_minus: float
    tau_plus: float
    levels_used: int
    seed: int
    particles: int
    confidence: float
    acceptance: float = float("nan")

    @property
    def sd(self) -> float:
        """Standard deviation of ``tau_hat`` implied by the interval."""
        z = norm.ppf(0.5 + self.confidence / 2.0)
        return (self.tau_plus - self.tau_minus) / (2.0 * z)


def level_plan(target_prob: float, particles: int, confidence: float) -> tuple[int, int, int]:
    """``(k_minus, k_hat, k_plus)`` level indices (1-based) for the estimate and its interval."""
    k_hat = math.ceil(math.log(target_prob) / math.log1p(-1.0 / particles))
    z = norm.ppf(0.5 + confidence / 2.0)
    half = z * math.sqrt(-particles * math.log(target_prob))
    k_minus = max(1, math.floor(k_hat - half))
    k_plus = max(k_hat, math.ceil(k_hat + half))
    return k_minus, k_hat, k_plus


def _finish(levels: np.ndarray, req: ThresholdRequest, seed: int, acceptance: float) -> ThresholdEstimate:
    km, kh, kp = level_plan(req.target_prob, req.particles, req.confidence)
    return ThresholdEstimate(float(levels[kh - 1]), float(levels[km - 1]), float(levels[kp - 1]),
                             kh, seed, req.particles, req.confidence, acceptance)


def stacked_weights(weights: Sequence[WeightMatrix]) -> np.ndarray:
    """``(m, K, t + 1)`` array as consumed by the splitting kernel."""
    return np.ascontiguousarray(np.stack([w.table for w in weights], axis=1))


def estimate_threshold(req: ThresholdRequest, seed: int) -> ThresholdEstimate:
    """Estimate ``tau`` with ``Pr{score(innocent) > tau} = target_prob``.

    Raises
    ------
    ConvergenceError
        If the mutation kernel rejects every changed proposal for a full sweep.
    """
    if req.surrogate is not None:
        return _estimate_additive(req, seed)
    _, _, kp = level_plan(req.target_prob, req.particles, req.confidence)
    t = req.t
    m = req.p.shape[0]
    n_prop = max(1, round(req.sweeps * t * m))
    key = derive_key(seed, "threshold")
    levels, accepted, proposed, status = kernels.splitting(
        stacked_weights(req.weights), req.p, t, req.particles, kp, n_prop, key)
    levels = np.asarray(levels)
    if status != 0 or levels.shape[0] < kp:
        raise ConvergenceError(
            f"splitting collapsed after {levels.shape[0]} of {kp} levels: "
            f"{t * m} consecutive proposals rejected (accepted {accepted} of {proposed})")
    return _finish(levels, req, seed, accepted / max(proposed, 1))


def _estimate_additive(req: ThresholdRequest, seed: int) -> ThresholdEstimate:
    """Same algorithm for an additive score of ``m`` independent coordinates."""
    _, _, kp = level_plan(req.target_prob, req.particles, req.confidence)
    N, m = req.particles, req.m
    g = req.surrogate
    st = Stream(derive_key(seed, "threshold"))
    contrib = np.array([[g(st.uniform()) for _ in range(m)] for _ in range(N)], dtype=np.float64)
    score = contrib.sum(axis=1)
    n_prop = max(1, round(req.sweeps * m))
    cursor = 0
    levels = np.empty(kp)
    accepted = proposed = 0
    for it in range(kp):
        amin = int(np.argmin(score))
        L = score[amin]
        levels[it] = L
        if it == kp - 1:
            break
        src = int(st.uniform() * (N - 1))
        if src >= amin:
            src += 1
        row = contrib[src].copy()
        s = score[src]
        for _ in range(n_prop):
            i = cursor
            cursor = (cursor + 1) % m
            new = g(st.uniform())
            cand = s + new - row[i]
            proposed += 1
            if cand > L:
                row[i] = new
                s = cand
                accepted += 1
        contrib[amin] = row
        score[amin] = row.sum()
    return _finish(levels, req, seed, accepted / max(proposed, 1))


def direct_exceedance(req: ThresholdRequest, taus, count: int, seed: int,
                      chunk: int = 1_000_000) -> np.ndarray:
    """Fraction of ``count`` fresh innocent tuples scoring above each ``tau``."""
    taus = np.atleast_1d(np.asarray(taus, dtype=np.float64))
    w = stacked_weights(req.weights)
    hits = np.zeros(taus.shape[0], dtype=np.int64)
    done = 0
    block = 0
    while done < count:
        size = min(chunk, count - done)
        scores = np.sort(kernels.direct_scores(w, req.p, req.t, size, derive_key(seed, "direct", block)))
        hits += size - np.searchsorted(scores, taus, side="right")
        done += size
        block += 1
    return hits / count
