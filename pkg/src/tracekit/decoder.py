"""Iterative, side-informed joint decoder.

One iteration first scores every remaining user on its own (``t = 1``)
against a threshold calibrated at ``P_fp / n``. If nobody clears it, the
decoder moves to subsets: for ``t = 2, 3, ...`` it keeps the ``n(t)`` best
single-score suspects, scores all their ``t``-subsets, and, if the best
subset clears a threshold calibrated at ``P_fp / C(n, t)``, tries to accuse
one of its members with a side-informed single score. Each accusation joins
the side information and the loop restarts at ``t = 1``.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from ._rng import derive_key
from .codegen import CodeMatrix, SecretVector
from .collusion import CollusionChannel, PiratedTrace
from .errors import ConvergenceError, ParameterError
from .inference import SideInfo, channel_to_text, fit_soft, hard_threshold, known_channel, mle_hard
from .rare_event import DEFAULT_PARTICLES, DEFAULT_SWEEPS, ThresholdRequest, estimate_threshold
from .scoring import (ScoreList, build_weights, compound_weights, max_subsets, score_single,
                      score_subsets, symmetric_weights, top_suspects)

SCORE_MODES = ("inference", "compound", "symmetric", "map-oracle")
SCENARIOS = ("detect-one", "detect-many")


@dataclass(frozen=True)
class DecoderParams:
    c_max: int
    t_max: int | None = None      # min(5, c_max) when unset
    subset_budget: float = 4.5e6
    p_fp: float = 1e-2
    scenario: str = "detect-many"
    score_mode: str = "inference"
    particles: int = DEFAULT_PARTICLES
    sweeps: float = DEFAULT_SWEEPS
    confidence: float = 0.95
    seed: int = 0
    single_pass: bool = False
    oracle: CollusionChannel | None = field(default=None, compare=False)

    def __post_init__(self):
        if self.c_max < 1:
            raise ParameterError("c_max must be >= 1")
        if self.t_max is None:
            object.__setattr__(self, "t_max", min(5, self.c_max))
        if not 1 <= self.t_max <= self.c_max:
            raise ParameterError(f"need 1 <= t_max={self.t_max} <= c_max={self.c_max}")
        if not 0.0 < self.p_fp < 1.0:
            raise ParameterError("P_fp must lie in (0, 1)")
        if self.scenario not in SCENARIOS:
            raise ParameterError(f"scenario must be one of {SCENARIOS}")
        if self.score_mode not in SCORE_MODES:
            raise ParameterError(f"score mode must be one of {SCORE_MODES}")
        if self.score_mode == "map-oracle" and self.oracle is None:
            raise ParameterError("map-oracle mode needs the true channel")
        if self.subset_budget < 1:
            raise ParameterError("subset budget must be >= 1")


@dataclass
class IterationRecord:
    index: int
    stage: str
    t: int
    target: float
    tau_hat: float = float("nan")
    tau_minus: float = float("nan")
    tau_plus: float = float("nan")
    best_ids: tuple = ()
    best_score: float = float("nan")
    channel: str = ""
    accused: tuple = ()
    tested: list = field(default_factory=list)
    note: str = ""


@dataclass
class AccusationReport:
    accused: tuple = ()
    iterations: list = field(default_factory=list)
    gave_up_reason: str = ""
    wall: dict = field(default_factory=dict)
    model_tags: list = field(default_factory=list)

    def to_text(self) -> str:
        out = [f"accused: {' '.join(map(str, self.accused)) or '-'}",
               f"gave_up_reason: {self.gave_up_reason or '-'}"]
        for rec in self.iterations:
            out.append("")
            out.append(f"[iteration {rec.index}]")
            out.append(f"stage: {rec.stage}")
            out.append(f"t: {rec.t}")
            out.append(f"target: {rec.target:.6g}")
            out.append(f"tau: {rec.tau_hat:.10g} {rec.tau_minus:.10g} {rec.tau_plus:.10g}")
            if rec.best_ids:
                out.append(f"best: {' '.join(map(str, rec.best_ids))} {rec.best_score:.10g}")
            if rec.tested:
                out.append("tested: " + " ".join(f"{u}:{s:.6g}/{tp:.6g}" for u, s, tp in rec.tested))
            if rec.channel:
                out.append("channel: " + rec.channel.strip().replace("\n", "; "))
            out.append(f"accused: {' '.join(map(str, rec.accused)) or '-'}")
            if rec.note:
                out.append(f"note: {rec.note}")
        return "\n".join(out) + "\n"

    def csv_row(self, run_id=0, seed=0, colluders=None) -> dict:
        row = {"run": run_id, "seed": seed, "accused": ";".join(map(str, self.accused)),
               "n_accused": len(self.accused), "iterations": len(self.iterations),
               "gave_up": self.gave_up_reason}
        if colluders is not None:
            guilty = set(colluders)
            row["caught"] = sum(1 for j in self.accused if j in guilty)
            row["fp"] = int(any(j not in guilty for j in self.accused))
        return row

    def csv_text(self, **kw) -> str:
        row = self.csv_row(**kw)
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=list(row), lineterminator="\n")
        w.writeheader()
        w.writerow(row)
        return buf.getvalue()


class _Context:
    """Everything a decoding run needs; never holds the true colluders."""

    def __init__(self, y, soft: bool, code: CodeMatrix, secret: SecretVector, params: DecoderParams):
        self.y = y
        self.soft = soft
        self.code = code
        self.p = secret.p
        self.params = params
        self.report = AccusationReport()
        self.counter = 0

    # -- channel model ----------------------------------------------------------
    @property
    def c_eff(self) -> int:
        if self.params.score_mode == "map-oracle":
            return self.params.oracle.c
        return self.params.c_max

    def infer(self, si: SideInfo):
        mode = self.params.score_mode
        if mode == "map-oracle":
            return known_channel(self.params.oracle)
        if mode != "inference":
            return None
        t0 = time.perf_counter()
        if self.soft:
            est = fit_soft(self.y, self.p, si, self.params.c_max)
            self.report.model_tags.append(est.model)
        else:
            est = mle_hard(self.y, self.p, si, self.params.c_max)
        self._clock("inference", t0)
        return est

    def weights(self, est, si: SideInfo, t: int):
        mode = self.params.score_mode
        if mode == "symmetric":
            return (symmetric_weights(hard_threshold(self.y) if self.soft else self.y, self.p),)
        if mode == "compound":
            from .infotheory import worst_set
            y = hard_threshold(self.y) if self.soft else self.y
            return tuple(compound_weights(y, self.p, worst_set(self.params.c_max)))
        return (build_weights(self.y, self.p, est, si, t),)

    def threshold(self, weights, target: float, *labels):
        req = ThresholdRequest(target, weights, self.p, self.params.particles, self.params.sweeps,
                               self.params.confidence)
        t0 = time.perf_counter()
        est = estimate_threshold(req, derive_key(self.params.seed, *labels))
        self._clock("threshold", t0)
        return est

    def single_scores(self, weights, users) -> ScoreList:
        t0 = time.perf_counter()
        best = None
        for W in weights:
            s = score_single(self.code, users, W)
            best = s if best is None else ScoreList(s.ids, np.maximum(best.scores, s.scores))
        self._clock("scoring", t0)
        return best

    def _clock(self, key, t0):
        self.report.wall[key] = self.report.wall.get(key, 0.0) + time.perf_counter() - t0

    def record(self, **kw) -> IterationRecord:
        rec = IterationRecord(index=self.counter, **kw)
        self.counter += 1
        self.report.iterations.append(rec)
        return rec


def _digest(est) -> str:
    return "" if est is None else channel_to_text(est)


def accuse_in_subset(best, ctx: _Context, accused: list, stage_t: int) -> int | None:
    """Test members of the best subset, most frequent first, with side information
    ``U_SI + (T \\ {j})``; returns the first user whose score clears ``tau'+``."""
    params = ctx.params
    n = ctx.code.n
    rec = ctx.record(stage="subset-member", t=1, target=params.p_fp / n, best_ids=best.top_subset,
                     best_score=best.top_score)
    notes = []
    for j in best.ranked():
        side = list(accused) + [u for u in best.top_subset if u != j]
        if len(side) > ctx.c_eff - 1:
            notes.append(f"skip {j}: side information of {len(side)} users exceeds c_max-1")
            continue
        si = SideInfo.from_users(ctx.code, side)
        est = ctx.infer(si)
        weights = ctx.weights(est, si, 1)
        score = float(ctx.single_scores(weights, [j]).scores[0])
        thr = ctx.threshold(weights, params.p_fp / n, "member", len(accused), stage_t, j)
        rec.tested.append((j, score, thr.tau_plus))
        rec.tau_hat, rec.tau_minus, rec.tau_plus = thr.tau_hat, thr.tau_minus, thr.tau_plus
        rec.channel = _digest(est)
        if score > thr.tau_plus:
            rec.accused = (j,)
            rec.note = "; ".join(notes)
            return j
    rec.note = "; ".join(notes) or "no member cleared its threshold"
    return None


def _run(ctx: _Context) -> AccusationReport:
    params, code = ctx.params, ctx.code
    n = code.n
    accused: list[int] = []
    counts = None
    single_only = params.single_pass or params.score_mode in ("compound", "symmetric")
    while True:
        if len(accused) >= ctx.c_eff:
            ctx.report.gave_up_reason = "side information reached c_max"
            break
        si = SideInfo.from_users(code, accused)
        est = ctx.infer(si)
        weights = ctx.weights(est, si, 1)
        remaining = np.setdiff1d(np.arange(n), np.asarray(accused, dtype=np.int64))
        s = ctx.single_scores(weights, remaining)
        thr = ctx.threshold(weights, params.p_fp / n, "single", len(accused))
        above = s.ids[s.scores > thr.tau_plus]
        room = 1 if params.scenario == "detect-one" else ctx.c_eff - len(accused)
        if above.shape[0] > room:
            order = np.argsort(-s.scores[s.scores > thr.tau_plus], kind="stable")
            above = above[order[:room]]
        top = int(np.argmax(s.scores))
        rec = ctx.record(stage="single", t=1, target=params.p_fp / n, tau_hat=thr.tau_hat,
                         tau_minus=thr.tau_minus, tau_plus=thr.tau_plus,
                         best_ids=(int(s.ids[top]),), best_score=float(s.scores[top]),
                         channel=_digest(est), accused=tuple(int(j) for j in above))
        new = [int(j) for j in above]
        t = 1
        while not new and t < params.t_max and not single_only:
            t += 1
            if t + len(accused) > ctx.c_eff:
                rec.note = f"joint stage stopped: t={t} plus {len(accused)} side users exceeds c_max"
                break
            n_keep = min(max_subsets(t, params.subset_budget), remaining.shape[0])
            if n_keep < t:
                break
            suspects = top_suspects(s, n_keep, counts)
            wt = ctx.weights(est, si, t)
            t0 = time.perf_counter()
            _, best = score_subsets(code, suspects, wt[0], params.subset_budget)
            ctx._clock("joint", t0)
            counts = {int(u): int(a) for u, a in zip(best.users, best.counts)}
            target = params.p_fp / math.comb(n, t)
            thr_t = ctx.threshold(wt, target, "joint", len(accused), t)
            ctx.record(stage="joint", t=t, target=target, tau_hat=thr_t.tau_hat,
                       tau_minus=thr_t.tau_minus, tau_plus=thr_t.tau_plus, best_ids=best.top_subset,
                       best_score=best.top_score, channel="")
            if best.top_score > thr_t.tau_plus:
                j = accuse_in_subset(best, ctx, accused, t)
                if j is not None:
                    new = [j]
        if not new:
            ctx.report.gave_up_reason = ctx.report.gave_up_reason or "no score above threshold"
            break
        accused.extend(new)
        if params.scenario == "detect-one":
            ctx.report.gave_up_reason = "detect-one: stopped after first accusation"
            break
        if single_only:
            ctx.report.gave_up_reason = "single-only decoder: one pass"
            break
    ctx.report.accused = tuple(accused)
    return ctx.report


def detect(trace: PiratedTrace | np.ndarray, code: CodeMatrix, secret: SecretVector,
           params: DecoderParams) -> AccusationReport:
    """Run the iterative decoder on a hard trace.

    Only the observed sequence is read from ``trace``; its ``colluders`` and
    ``channel`` fields are never consulted.
    """
    y = trace.hard if isinstance(trace, PiratedTrace) else np.asarray(trace, dtype=np.uint8)
    if y is None:
        raise ParameterError("trace has no hard sequence; use detect_soft")
    return _decode(y, False, code, secret, params)


def detect_soft(trace: PiratedTrace | np.ndarray, code: CodeMatrix, secret: SecretVector,
                params: DecoderParams, mode: str = "soft") -> AccusationReport:
    """Decode a soft trace, either directly (``soft``) or after quantisation (``hard``)."""
    y = trace.soft if isinstance(trace, PiratedTrace) else np.asarray(trace, dtype=np.float64)
    if y is None:
        raise ParameterError("trace has no soft sequence")
    if mode == "hard":
        return _decode(hard_threshold(y), False, code, secret, params)
    if mode != "soft":
        raise ParameterError("mode must be 'soft' or 'hard'")
    return _decode(np.asarray(y, dtype=np.float64), True, code, secret, params)


def _decode(y, soft, code, secret, params) -> AccusationReport:
    if y.shape[0] != code.m or secret.m != code.m:
        raise ParameterError("trace, code and secret lengths differ")
    ctx = _Context(y, soft, code, secret, params)
    try:
        return _run(ctx)
    except ConvergenceError as exc:
        ctx.report.gave_up_reason = f"threshold estimation failed: {exc}"
    except ParameterError as exc:
        ctx.report.gave_up_reason = f"inference failed: {exc}"
    ctx.report.accused = tuple(j for rec in ctx.report.iterations for j in rec.accused)
    return ctx.report
