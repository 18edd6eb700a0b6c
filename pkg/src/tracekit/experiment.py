"""Batch simulation: generate, attack and decode many times, emit CSV rows.

Every repetition draws its own code, colluder set and attack randomness from
a per-run seed, so rows can be replayed one by one. All decoder variants of
a run see the same code and the same pirated trace (paired comparisons).
"""
from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from typing import Iterable, TextIO

import numpy as np
from scipy.stats import beta

from ._rng import derive_key, splitmix_seed
from .codegen import CodeParams, generate
from .collusion import forge, forge_soft
from .config import ExperimentConfig
from .decoder import DecoderParams, detect, detect_soft


@dataclass
class ResultRow:
    kind: str
    run: int
    seed: int
    decoder: str
    c: int
    attack: str
    m: int
    n: int
    caught: int
    fp: int
    n_accused: int
    accused: str
    t_generate: float
    t_attack: float
    t_decode: float
    t_threshold: float
    thresholds: str
    particles: int
    confidence: float
    sweeps: float
    gave_up: str
    digest: str


SUMMARY_FIELDS = ["kind", "decoder", "c", "attack", "m", "n", "runs", "mean_caught", "fp_count",
                  "fp_rate", "fp_ci_low", "fp_ci_high", "pe", "mean_decode_s", "digest"]


def choose_colluders(n: int, c: int, seed: int) -> list[int]:
    rng = np.random.default_rng(derive_key(seed, "colluders"))
    return sorted(int(j) for j in rng.choice(n, size=c, replace=False))


def variant_params(base: DecoderParams, name: str, oracle=None) -> tuple[DecoderParams, str | None]:
    """Decoder parameters and soft mode (``None`` for hard traces) of a named variant."""
    soft_mode = None
    if name.startswith("soft-"):
        soft_mode, name = "soft", name[5:]
    elif name.startswith("hard-") and name != "hard":
        soft_mode, name = "hard", name[5:]
    if name == "joint":
        p = replace(base, score_mode="inference", single_pass=False)
    elif name == "single":
        p = replace(base, score_mode="inference", t_max=1, single_pass=True)
    elif name == "single-si":
        p = replace(base, score_mode="inference", t_max=1, single_pass=False)
    elif name in ("compound", "symmetric"):
        p = replace(base, score_mode=name, t_max=1)
    elif name == "map-oracle":
        p = replace(base, score_mode="map-oracle", oracle=oracle,
                    t_max=min(base.t_max, oracle.c), c_max=max(base.c_max, oracle.c))
    else:
        raise ValueError(f"unknown decoder variant {name!r}")
    return p, soft_mode


def run_once(cfg: ExperimentConfig, c: int, m: int, run_id: int,
             digest: str | None = None) -> list[ResultRow]:
    """One repetition at collusion size ``c`` and code length ``m``, all decoder variants."""
    digest = digest or cfg.digest()
    seed = splitmix_seed(derive_key(cfg.seed, "sweep", c, m), run_id)
    attack = replace(cfg.attack, c=c)
    t0 = time.perf_counter()
    code, secret = generate(CodeParams(cfg.code.n, m, cfg.code.dist, seed))
    t1 = time.perf_counter()
    colluders = choose_colluders(cfg.code.n, c, seed)
    soft = attack.is_soft
    if soft:
        trace = forge_soft(code, colluders, attack.soft_channel(), derive_key(seed, "attack"))
    else:
        trace = forge(code, colluders, attack.hard_channel(), derive_key(seed, "attack"))
    t2 = time.perf_counter()
    rows = []
    guilty = set(colluders)
    oracle = None if soft else attack.hard_channel()
    for name in cfg.decoders:
        params, soft_mode = variant_params(replace(cfg.decoder, seed=seed), name, oracle)
        start = time.perf_counter()
        if soft:
            report = detect_soft(trace, code, secret, params, soft_mode or "hard")
        else:
            report = detect(trace, code, secret, params)
        t3 = time.perf_counter()
        taus = [f"{r.t}:{r.tau_plus:.6g}" for r in report.iterations if not math.isnan(r.tau_plus)]
        rows.append(ResultRow(
            "run", run_id, seed, name, c, attack.name, m, cfg.code.n,
            sum(1 for j in report.accused if j in guilty),
            int(any(j not in guilty for j in report.accused)), len(report.accused),
            ";".join(map(str, report.accused)), round(t1 - t0, 6), round(t2 - t1, 6),
            round(t3 - start, 6), round(report.wall.get("threshold", 0.0), 6), " ".join(taus),
            params.particles, params.confidence, params.sweeps, report.gave_up_reason, digest))
    return rows


def _task(args):
    return run_once(*args)


def binomial_ci(k: int, n: int, level: float = 0.95) -> tuple[float, float]:
    """Clopper-Pearson interval for a binomial proportion."""
    a = 1.0 - level
    lo = 0.0 if k == 0 else float(beta.ppf(a / 2, k, n - k + 1))
    hi = 1.0 if k == n else float(beta.ppf(1 - a / 2, k + 1, n - k))
    return lo, hi


def summarise(rows: Iterable[ResultRow]) -> list[dict]:
    """Per (c, m, decoder) aggregates; ``pe`` counts runs with a false positive or no catch."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.c, r.m, r.decoder), []).append(r)
    out = []
    for (c, m, dec), rs in sorted(groups.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        k = sum(r.fp for r in rs)
        lo, hi = binomial_ci(k, len(rs))
        errors = sum(1 for r in rs if r.fp or r.caught == 0)
        out.append({
            "kind": "summary", "decoder": dec, "c": c, "attack": rs[0].attack, "m": m, "n": rs[0].n,
            "runs": len(rs), "mean_caught": float(np.mean([r.caught for r in rs])), "fp_count": k,
            "fp_rate": k / len(rs), "fp_ci_low": lo, "fp_ci_high": hi, "pe": errors / len(rs),
            "mean_decode_s": float(np.mean([r.t_decode for r in rs])), "digest": rs[0].digest,
        })
    return out


def grid(cfg: ExperimentConfig) -> list[tuple[int, int]]:
    cs = cfg.sweep_c or (cfg.attack.c,)
    ms = cfg.sweep_m or (cfg.code.m,)
    return [(c, m) for c in cs for m in ms]


def run_experiment(cfg: ExperimentConfig, out: TextIO | None = None,
                   progress: TextIO | None = None) -> tuple[list[ResultRow], list[dict]]:
    """Run every (c, m, repetition); write per-run rows then summary rows as CSV."""
    jobs = [(c, m, r) for c, m in grid(cfg) for r in range(cfg.repetitions)]
    digest = cfg.digest()
    shipped = replace(cfg, raw=None)    # parsers do not pickle
    rows: list[ResultRow] = []
    if cfg.workers > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            for res in pool.map(_task, [(shipped, c, m, r, digest) for c, m, r in jobs]):
                rows.extend(res)
    else:
        for i, (c, m, r) in enumerate(jobs):
            rows.extend(run_once(shipped, c, m, r, digest))
            if progress is not None:
                progress.write(f"\r{i + 1}/{len(jobs)} runs")
                progress.flush()
        if progress is not None:
            progress.write("\n")
    summary = summarise(rows)
    if out is not None:
        write_csv(out, rows, summary)
    return rows, summary


def write_csv(out: TextIO, rows: list[ResultRow], summary: list[dict]) -> None:
    run_fields = list(asdict(rows[0]).keys()) if rows else list(ResultRow.__dataclass_fields__)
    w = csv.DictWriter(out, fieldnames=run_fields, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow(asdict(r))
    w = csv.DictWriter(out, fieldnames=SUMMARY_FIELDS, lineterminator="\n")
    w.writeheader()
    for s in summary:
        w.writerow({k: (f"{v:.6g}" if isinstance(v, float) else v) for k, v in s.items()})

