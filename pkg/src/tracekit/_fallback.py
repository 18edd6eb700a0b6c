"""Pure-Python twin of ``tracekit._kernels``.

Random draws are consumed in exactly the same order as in the compiled core,
so both produce identical codes and identical splitting trajectories.
"""
from __future__ import annotations

import math

import numpy as np

from ._rng import Stream, uniforms_2d

IMPLEMENTATION = "python"


def code_bits(keys: np.ndarray, p: np.ndarray) -> np.ndarray:
    keys = np.ascontiguousarray(keys, dtype=np.uint64)
    p = np.ascontiguousarray(p, dtype=np.float64)
    n, m = keys.shape[0], p.shape[0]
    out = np.zeros((n, (m + 7) // 8), dtype=np.uint8)
    block = max(1, 2_000_000 // max(m, 1))
    for lo in range(0, n, block):
        u = uniforms_2d(keys[lo:lo + block], m)
        out[lo:lo + block] = np.packbits(u < p, axis=1, bitorder="little")
    return out


def single_scores(packed: np.ndarray, w0: np.ndarray, w1: np.ndarray) -> np.ndarray:
    m = w0.shape[0]
    bits = np.unpackbits(packed, axis=1, count=m, bitorder="little")
    return w0.sum() + bits @ (w1 - w0)


def revolving_door(s: int, t: int):
    """Yield ``(subset, out, in)`` in revolving-door order; the first item has
    ``out = in = None``. Subsets are lists of ``t`` indices from ``range(s)``."""
    if t < 1 or t > s:
        raise ValueError("need 1 <= t <= number of suspects")
    c = [0] + list(range(t)) + [s]
    yield c[1:t + 1], None, None
    if t == s:
        return
    if t == 1:
        for v in range(1, s):
            yield [v], v - 1, v
        return
    while True:
        step = _revolving_step(c, t)
        if step is None:
            return
        yield c[1:t + 1], step[0], step[1]


def _revolving_step(c, t):
    if t & 1:
        if c[1] + 1 < c[2]:
            c[1] += 1
            return c[1] - 1, c[1]
        j, decrease = 2, True
    else:
        if c[1] > 0:
            c[1] -= 1
            return c[1] + 1, c[1]
        j, decrease = 2, False
    while True:
        if decrease:
            if c[j] >= j:
                out = c[j]
                c[j] = c[j - 1]
                c[j - 1] = j - 2
                return out, j - 2
            j += 1
            decrease = False
        else:
            if c[j] + 1 < c[j + 1]:
                c[j - 1] = c[j]
                c[j] += 1
                return j - 2, c[j]
            j += 1
            if j > t:
                return None
            decrease = True


def subset_scores(rows: np.ndarray, w: np.ndarray, t: int, record_all: bool):
    s, m = rows.shape
    idx = np.arange(m)
    phi = None
    ubest = np.full(s, -np.inf)
    usub = np.full((s, t), -1, dtype=np.int64)
    gbest, gsub = -np.inf, np.full(t, -1, dtype=np.int64)
    scores = [] if record_all else None
    total = 0
    rows64 = rows.astype(np.int64)
    for subset, out_u, in_u in revolving_door(s, t):
        if phi is None:
            phi = rows64[subset].sum(axis=0)
        else:
            phi += rows64[in_u] - rows64[out_u]
        score = float(w[idx, phi].sum())
        if record_all:
            scores.append(score)
        total += 1
        if score > gbest:
            gbest = score
            gsub[:] = subset
        for r in subset:
            if score > ubest[r]:
                ubest[r] = score
                usub[r] = subset
    usub.sort(axis=1)
    gsub.sort()
    return ubest, usub, gbest, gsub, (np.array(scores) if record_all else None), total


def splitting(w: np.ndarray, p: np.ndarray, t: int, n_particles: int, kmax: int,
              n_prop: int, key: int):
    m, K, _ = w.shape
    N = n_particles
    st = Stream(key)
    pl = p.tolist()
    bits = np.zeros((N, t, m), dtype=np.uint8)
    phi = np.zeros((N, m), dtype=np.int64)
    part = np.zeros((N, K))
    score = np.empty(N)
    for a in range(N):
        for r in range(t):
            for i in range(m):
                if st.uniform() < pl[i]:
                    bits[a, r, i] = 1
                    phi[a, i] += 1
        for k in range(K):
            u = 0.0
            for i in range(m):
                u += w[i, k, phi[a, i]]
            part[a, k] = u
        score[a] = part[a].max()
    levels = []
    accepted = proposed = streak = 0
    sweep = t * m
    status = 0
    rcur = icur = 0
    for it in range(kmax):
        amin = int(np.argmin(score))
        L = score[amin]
        levels.append(L)
        if it == kmax - 1:
            break
        src = int(st.uniform() * (N - 1))
        if src >= amin:
            src += 1
        bits[amin] = bits[src]
        phi[amin] = phi[src]
        part[amin] = part[src]
        score[amin] = score[src]
        for _ in range(n_prop):
            r, i = rcur, icur
            icur += 1
            if icur == m:
                icur = 0
                rcur = (rcur + 1) % t
            nb = 1 if st.uniform() < pl[i] else 0
            if nb == bits[amin, r, i]:
                continue
            old = phi[amin, i]
            new = old + 1 if nb else old - 1
            newpart = [part[amin, k] + (w[i, k, new] - w[i, k, old]) for k in range(K)]
            best = max(newpart)
            proposed += 1
            if best > L:
                bits[amin, r, i] = nb
                phi[amin, i] = new
                part[amin] = newpart
                score[amin] = best
                accepted += 1
                streak = 0
            else:
                streak += 1
        if streak >= sweep:
            status = 1
            break
    return np.array(levels), accepted, proposed, status


def direct_scores(w: np.ndarray, p: np.ndarray, t: int, count: int, key: int) -> np.ndarray:
    m, K, _ = w.shape
    st = Stream(key)
    pl = p.tolist()
    out = np.empty(count)
    idx = np.arange(m)
    for a in range(count):
        phi = np.zeros(m, dtype=np.int64)
        for _ in range(t):
            for i in range(m):
                if st.uniform() < pl[i]:
                    phi[i] += 1
        best = -math.inf
        for k in range(K):
            u = 0.0
            for v in w[idx, k, phi]:
                u += v
            best = max(best, u)
        out[a] = best
    return out
