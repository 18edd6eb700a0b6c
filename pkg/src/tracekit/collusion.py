"""Collusion attacks: marking-assumption channels, soft (AWGN) forgeries and
equivalence-class degree elevation."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from typing import BinaryIO, Sequence

import numpy as np

from ._rng import derive_key, uniforms
from .codegen import CodeMatrix
from .errors import FormatError, ParameterError

HARD_ATTACKS = ("interleaving", "majority", "minority", "coin-flip", "all-ones", "worst-single", "worst-joint")
SOFT_PRESETS = ("averaging", "set-to-0")


@dataclass(frozen=True)
class CollusionChannel:
    """``theta[phi] = Pr{Y = 1 | phi colluders hold a 1}`` for ``phi = 0..c``."""

    theta: np.ndarray

    def __post_init__(self):
        th = np.array(self.theta, dtype=np.float64).ravel()
        if th.size < 2:
            raise ParameterError("a channel needs c >= 1")
        if th[0] != 0.0 or th[-1] != 1.0:
            raise ParameterError(f"marking assumption violated: theta(0)={th[0]}, theta(c)={th[-1]}")
        if np.any(th < 0.0) or np.any(th > 1.0):
            raise ParameterError("channel entries must lie in [0, 1]")
        th.setflags(write=False)
        object.__setattr__(self, "theta", th)

    @property
    def c(self) -> int:
        return self.theta.shape[0] - 1

    @classmethod
    def from_free(cls, free: Sequence[float]) -> "CollusionChannel":
        """Build from the free coordinates ``theta(1..c-1)``."""
        return cls(np.concatenate(([0.0], np.clip(np.asarray(free, dtype=np.float64), 0.0, 1.0), [1.0])))

    def reversed(self) -> "CollusionChannel":
        """The relabelled channel ``phi -> 1 - theta(c - phi)`` (bit-flip symmetry)."""
        return CollusionChannel(1.0 - self.theta[::-1])

    def prob_one(self, p) -> np.ndarray:
        """``Pr{Y = 1 | p, theta}``: the Bernstein polynomial with coefficients theta."""
        from .scoring import generic_prob
        return generic_prob(0, 0, p, self.theta)

    def __repr__(self):
        vals = ", ".join(f"{v:.6g}" for v in self.theta)
        return f"CollusionChannel(c={self.c}, theta=[{vals}])"


@dataclass(frozen=True)
class SoftChannel:
    """Model II: hard channel ``theta`` then AWGN. Model I: ``z = mu[phi]`` then AWGN."""

    model: str
    c: int
    params: np.ndarray
    noise_var: float

    def __post_init__(self):
        if self.model not in ("I", "II"):
            raise ParameterError(f"soft model must be 'I' or 'II', got {self.model!r}")
        if not self.noise_var > 0:
            raise ParameterError("noise variance must be positive")
        vals = np.array(self.params, dtype=np.float64).ravel()
        if vals.shape[0] != self.c + 1:
            raise ParameterError(f"expected {self.c + 1} parameters, got {vals.shape[0]}")
        if self.model == "II":
            CollusionChannel(vals)
        else:
            if vals[0] != -1.0 or vals[-1] != 1.0:
                raise ParameterError("model I requires mu(0) = -1 and mu(c) = +1")
            if np.any(np.abs(vals) > 1.0):
                raise ParameterError("model I means must lie in [-1, 1]")
        vals.setflags(write=False)
        object.__setattr__(self, "params", vals)

    @property
    def theta(self) -> np.ndarray:
        if self.model != "II":
            raise AttributeError("model I has no hard channel")
        return self.params

    @property
    def mu(self) -> np.ndarray:
        if self.model != "I":
            raise AttributeError("model II has no mean vector")
        return self.params

    def density(self, y: np.ndarray) -> np.ndarray:
        """``dens[i, k]``: pdf of ``y[i]`` when ``k`` colluders hold a 1."""
        return soft_density(self.model, self.params, self.noise_var, y)


def soft_density(model: str, params: np.ndarray, noise_var: float, y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)[:, None]
    params = np.asarray(params, dtype=np.float64)[None, :]
    norm = 1.0 / np.sqrt(2.0 * np.pi * noise_var)
    if model == "II":
        up = np.exp(-((y - 1.0) ** 2) / (2 * noise_var))
        down = np.exp(-((y + 1.0) ** 2) / (2 * noise_var))
        return norm * (params * up + (1.0 - params) * down)
    return norm * np.exp(-((y - params) ** 2) / (2 * noise_var))


def snr_to_noise_var(snr_db: float) -> float:
    """Unit-power antipodal symbols: SNR = 1 / sigma^2."""
    return float(10.0 ** (-snr_db / 10.0))


@dataclass(frozen=True)
class PiratedTrace:
    hard: np.ndarray | None = None
    soft: np.ndarray | None = None
    colluders: tuple = ()
    channel: object = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        if self.hard is None and self.soft is None:
            raise ParameterError("a trace needs a hard or a soft sequence")
        if self.hard is not None:
            h = np.ascontiguousarray(self.hard, dtype=np.uint8)
            h.setflags(write=False)
            object.__setattr__(self, "hard", h)
        if self.soft is not None:
            s = np.ascontiguousarray(self.soft, dtype=np.float64)
            s.setflags(write=False)
            object.__setattr__(self, "soft", s)
        if self.hard is not None and self.soft is not None and self.hard.shape != self.soft.shape:
            raise ParameterError("hard and soft sequences differ in length")
        object.__setattr__(self, "colluders", tuple(int(j) for j in self.colluders))

    @property
    def m(self) -> int:
        return (self.hard if self.hard is not None else self.soft).shape[0]


def named_channel(name: str, c: int, **kwargs) -> CollusionChannel:
    """Preset attacks. ``worst-single``/``worst-joint`` minimise the achievable rate."""
    if c < 1:
        raise ParameterError("collusion size must be >= 1")
    phi = np.arange(c + 1, dtype=np.float64)
    if name == "interleaving":
        th = phi / c
    elif name == "majority":
        th = (2 * phi >= c).astype(float)  # ties go to 1
    elif name == "minority":
        th = (2 * phi < c).astype(float)
        th[0], th[c] = 0.0, 1.0
    elif name == "coin-flip":
        th = np.full(c + 1, 0.5)
        th[0], th[c] = 0.0, 1.0
    elif name == "all-ones":
        th = np.ones(c + 1)
        th[0] = 0.0
    elif name in ("worst-single", "worst-joint"):
        from .infotheory import worst_channel
        if c == 1:
            return CollusionChannel([0.0, 1.0])
        mode = "single" if name == "worst-single" else "joint"
        return worst_channel(kwargs.get("dist", "tardos"), c, mode, kwargs.get("ell"))
    else:
        raise ParameterError(f"unknown attack {name!r}; choose from {', '.join(HARD_ATTACKS)}")
    th[0] = 0.0
    th[c] = 1.0
    return CollusionChannel(th)


def soft_preset(name: str, c: int, noise_var: float) -> SoftChannel:
    """Model-I presets: ``averaging`` (mu = 2 phi / c - 1) and ``set-to-0``."""
    phi = np.arange(c + 1, dtype=np.float64)
    if name == "averaging":
        mu = 2.0 * phi / c - 1.0
    elif name == "set-to-0":
        mu = np.zeros(c + 1)
    else:
        raise ParameterError(f"unknown soft preset {name!r}; choose from {', '.join(SOFT_PRESETS)}")
    mu[0], mu[c] = -1.0, 1.0
    return SoftChannel("I", c, mu, noise_var)


def _collusion_counts(code: CodeMatrix, colluders, c: int) -> np.ndarray:
    colluders = list(colluders)
    if len(colluders) != c:
        raise ParameterError(f"{len(colluders)} colluders but the channel has c={c}")
    if len(set(colluders)) != len(colluders):
        raise ParameterError("colluder indices must be distinct")
    if any(j < 0 or j >= code.n for j in colluders):
        raise ParameterError("colluder index out of range")
    return code.column_sums(colluders)


def apply_channel(phi: np.ndarray, theta: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Memoryless forgery: ``y(i) = [u(i) < theta(phi(i))]``."""
    return (u < np.asarray(theta)[phi]).astype(np.uint8)


def forge(code: CodeMatrix, colluders, channel: CollusionChannel, seed: int) -> PiratedTrace:
    phi = _collusion_counts(code, colluders, channel.c)
    u = uniforms(derive_key(seed, "forge"), 0, code.m)
    y = apply_channel(phi, channel.theta, u)
    return PiratedTrace(hard=y, colluders=tuple(colluders), channel=channel)


def _gaussians(key: int, m: int) -> np.ndarray:
    u1 = uniforms(key, 0, m)
    u2 = uniforms(key, m, m)
    return np.sqrt(-2.0 * np.log1p(-u1)) * np.cos(2.0 * np.pi * u2)


def forge_soft(code: CodeMatrix, colluders, channel: SoftChannel, seed: int) -> PiratedTrace:
    phi = _collusion_counts(code, colluders, channel.c)
    if channel.model == "II":
        u = uniforms(derive_key(seed, "forge"), 0, code.m)
        z = 2.0 * apply_channel(phi, channel.params, u) - 1.0
    else:
        z = channel.params[phi]
    noise = np.sqrt(channel.noise_var) * _gaussians(derive_key(seed, "noise"), code.m)
    return PiratedTrace(soft=z + noise, colluders=tuple(colluders), channel=channel)


def elevate(channel: CollusionChannel, c_target: int) -> CollusionChannel:
    """Equivalent channel of size ``c_target`` (Bernstein degree elevation)."""
    c = channel.c
    if c_target < c:
        raise ParameterError(f"cannot elevate a size-{c} channel down to {c_target}")
    th = channel.theta.copy()
    for n in range(c, c_target):
        k = np.arange(n + 2, dtype=np.float64)
        a = k / (n + 1)
        prev = np.concatenate(([0.0], th))
        cur = np.concatenate((th, [0.0]))
        th = a * prev + (1.0 - a) * cur
    th[0], th[-1] = 0.0, 1.0
    return CollusionChannel(np.clip(th, 0.0, 1.0))


# -- trace file ---------------------------------------------------------------
#
#   magic "TRCY", u16 version (1), u64 m, u8 flags (bit0 hard, bit1 soft),
#   u32 colluder count, u64[count] colluder indices,
#   then m bytes (hard, 0/1) and/or m little-endian doubles (soft).

TRACE_MAGIC = b"TRCY"
TRACE_VERSION = 1
_THEAD = struct.Struct("<4sHQBI")


def write_trace(fh: BinaryIO, trace: PiratedTrace) -> None:
    flags = (1 if trace.hard is not None else 0) | (2 if trace.soft is not None else 0)
    fh.write(_THEAD.pack(TRACE_MAGIC, TRACE_VERSION, trace.m, flags, len(trace.colluders)))
    fh.write(np.asarray(trace.colluders, dtype="<u8").tobytes())
    if trace.hard is not None:
        fh.write(trace.hard.astype(np.uint8).tobytes())
    if trace.soft is not None:
        fh.write(trace.soft.astype("<f8").tobytes())


def read_trace(fh: BinaryIO) -> PiratedTrace:
    head = fh.read(_THEAD.size)
    if len(head) != _THEAD.size:
        raise FormatError("truncated trace header", len(head))
    magic, version, m, flags, count = _THEAD.unpack(head)
    if magic != TRACE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {TRACE_MAGIC!r}", 0)
    if version != TRACE_VERSION:
        raise FormatError(f"unsupported trace version {version}", 4)
    if not flags & 3 or flags & ~3:
        raise FormatError(f"invalid trace flags {flags:#x}", 14)
    offset = _THEAD.size

    def take(size, what):
        nonlocal offset
        data = fh.read(size)
        if len(data) != size:
            raise FormatError(f"truncated {what}", offset + len(data))
        offset += size
        return data

    colluders = tuple(int(v) for v in np.frombuffer(take(8 * count, "colluder list"), dtype="<u8"))
    hard = soft = None
    if flags & 1:
        start = offset
        hard = np.frombuffer(take(m, "hard sequence"), dtype=np.uint8).copy()
        if np.any(hard > 1):
            raise FormatError("hard symbol not in {0, 1}", start + int(np.argmax(hard > 1)))
    if flags & 2:
        soft = np.frombuffer(take(8 * m, "soft sequence"), dtype="<f8").astype(np.float64)
    return PiratedTrace(hard=hard, soft=soft, colluders=colluders)
