"""Counter-based 64-bit random streams shared by the compiled and pure-Python kernels.

A stream is identified by a 64-bit key; its ``i``-th output (0-based) is
``mix64(key + (i + 1) * GAMMA)`` -- the splitmix64 generator written as a pure
function of its counter. Every kernel consumes streams through this one
definition, so the Cython core and the fallback agree bit for bit.
"""
from __future__ import annotations

import numpy as np

MASK = (1 << 64) - 1
GAMMA = 0x9E3779B97F4A7C15
ROW_GAMMA = 0xD1B54A32D192ED03
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
INV53 = 1.0 / 9007199254740992.0


def mix64(z: int) -> int:
    z &= MASK
    z = ((z ^ (z >> 30)) * _M1) & MASK
    z = ((z ^ (z >> 27)) * _M2) & MASK
    return z ^ (z >> 31)


def derive_key(seed: int, *labels: int | str) -> int:
    """Fold ``labels`` into ``seed`` to produce an independent stream key."""
    h = mix64(int(seed) & MASK)
    for lbl in labels:
        if isinstance(lbl, str):
            v = 0
            for ch in lbl.encode():
                v = mix64(v ^ ch)
            lbl = v
        h = mix64(h ^ mix64((int(lbl) + GAMMA) & MASK))
    return h


def row_key(key: int, j: int) -> int:
    return mix64((key + (j + 1) * ROW_GAMMA) & MASK)


class Stream:
    """Sequential view of a counter stream (pure Python, used by the fallback)."""

    __slots__ = ("state",)

    def __init__(self, key: int):
        self.state = int(key) & MASK

    def next64(self) -> int:
        self.state = (self.state + GAMMA) & MASK
        return mix64(self.state)

    def uniform(self) -> float:
        return (self.next64() >> 11) * INV53


# -- vectorised numpy versions (uint64 arithmetic wraps modulo 2**64) --------

_U64 = np.uint64


def mix64_np(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=_U64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _U64(30))) * _U64(_M1)
        z = (z ^ (z >> _U64(27))) * _U64(_M2)
    return z ^ (z >> _U64(31))


def uniforms(key: int, start: int, count: int) -> np.ndarray:
    """Outputs ``start .. start+count-1`` of stream ``key`` as doubles in [0, 1)."""
    ctr = np.arange(start + 1, start + count + 1, dtype=_U64)
    with np.errstate(over="ignore"):
        z = _U64(key) + ctr * _U64(GAMMA)
    return (mix64_np(z) >> _U64(11)).astype(np.float64) * INV53


def row_keys(key: int, rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=_U64)
    with np.errstate(over="ignore"):
        z = _U64(key) + (rows + _U64(1)) * _U64(ROW_GAMMA)
    return mix64_np(z)


def uniforms_2d(keys: np.ndarray, count: int) -> np.ndarray:
    """One row of ``count`` uniforms per stream key."""
    ctr = np.arange(1, count + 1, dtype=_U64)
    with np.errstate(over="ignore"):
        z = np.asarray(keys, dtype=_U64)[:, None] + ctr[None, :] * _U64(GAMMA)
    return (mix64_np(z) >> _U64(11)).astype(np.float64) * INV53


def splitmix_seed(seed: int, run_id: int) -> int:
    """Per-repetition seed: ``seed xor run_id`` pushed through one splitmix step."""
    return mix64(((int(seed) ^ int(run_id)) + GAMMA) & MASK)
