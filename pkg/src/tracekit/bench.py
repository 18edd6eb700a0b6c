"""Throughput of the scoring kernels, compiled core against the pure-Python fallback."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from . import _fallback, kernels
from .codegen import CodeParams, generate
from .collusion import forge, named_channel
from .inference import known_channel
from .scoring import build_weights

REFERENCE_SINGLE = 1e6
REFERENCE_JOINT = 1e5


@dataclass
class BenchResult:
    implementation: str
    m: int
    single_per_s: float
    joint_per_s: float
    t: int

    def line(self) -> str:
        return (f"{self.implementation:>8}  m={self.m}  single {self.single_per_s:12.4g}/s  "
                f"joint(t={self.t}) {self.joint_per_s:12.4g}/s")


def _timed(fn, min_time: float) -> float:
    """Calls per second of ``fn`` (which returns its own work count)."""
    work, start = 0, time.perf_counter()
    while True:
        work += fn()
        elapsed = time.perf_counter() - start
        if elapsed >= min_time:
            return work / elapsed


def _fixture(m: int, n: int, seed: int):
    code, secret = generate(CodeParams(n, m, "tardos", seed))
    ch = named_channel("interleaving", 3)
    trace = forge(code, [0, 1, 2], ch, seed)
    est = known_channel(ch)
    w1 = build_weights(trace.hard, secret.p, est, t=1)
    w3 = build_weights(trace.hard, secret.p, est, t=3)
    return code, w1, w3


def measure(impl, m: int = 1024, n: int = 20_000, suspects: int = 40, t: int = 3,
            min_time: float = 0.5, seed: int = 1) -> BenchResult:
    """Single and ``t``-subset scores per second for one kernel implementation."""
    code, w1, wt = _fixture(m, n, seed)
    w0v, w1v = np.ascontiguousarray(w1.w[0]), np.ascontiguousarray(w1.w[1])
    bits = code.bits

    def single():
        impl.single_scores(bits, w0v, w1v)
        return n

    if impl is _fallback:
        suspects = min(suspects, 16)
    rows = np.ascontiguousarray(code.rows(np.arange(suspects)))
    table = wt.table

    def joint():
        impl.subset_scores(rows, table, t, False)
        return math.comb(suspects, t)

    return BenchResult(impl.IMPLEMENTATION, m, _timed(single, min_time), _timed(joint, min_time), t)


def run_bench(m: int = 1024, min_time: float = 0.5) -> list[BenchResult]:
    impls = [kernels.compiled] if kernels.compiled is not None else []
    impls.append(_fallback)
    return [measure(impl, m=m, min_time=min_time) for impl in impls]


def report(results: list[BenchResult]) -> str:
    out = [r.line() for r in results]
    out.append(f"reference  single {REFERENCE_SINGLE:12.4g}/s  joint {REFERENCE_JOINT:12.4g}/s")
    if len(results) == 2 and results[1].single_per_s > 0:
        out.append(f"speed-up  single x{results[0].single_per_s / results[1].single_per_s:.1f}  "
                   f"joint x{results[0].joint_per_s / results[1].joint_per_s:.1f}")
    return "\n".join(out) + "\n"
