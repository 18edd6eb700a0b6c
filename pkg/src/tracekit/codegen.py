"""Tardos code construction: secret bias vector and bit-packed codewords."""
from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field
from typing import BinaryIO

import numpy as np

from . import kernels
from ._rng import derive_key, row_keys, uniforms
from .errors import FormatError, ParameterError, SecretMissingError

P_MIN = 1e-6


class BiasDistribution:
    """A distribution ``f`` on (0, 1) for the per-position biases.

    Subclasses provide the quantile function (used for sampling) and a
    quadrature rule for expectations ``E_{P~f}[g(P)]``.
    """

    name = "abstract"

    def quantile(self, u: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def quadrature(self, nodes: int) -> tuple[np.ndarray, np.ndarray]:
        raise NotImplementedError


class TardosArcsine(BiasDistribution):
    """``f_T(p) = 1 / (pi sqrt(p (1 - p)))``, i.e. Beta(1/2, 1/2)."""

    name = "tardos"

    def quantile(self, u):
        return np.sin(0.5 * np.pi * np.asarray(u, dtype=np.float64)) ** 2

    def cdf(self, p):
        return (2.0 / np.pi) * np.arcsin(np.sqrt(np.asarray(p, dtype=np.float64)))

    def pdf(self, p):
        p = np.asarray(p, dtype=np.float64)
        return 1.0 / (np.pi * np.sqrt(p * (1.0 - p)))

    def quadrature(self, nodes):
        # p = sin^2(pi u / 2) maps u ~ U(0,1) onto f_T, so Gauss-Legendre in u
        # integrates against f_T without ever touching the endpoint singularities.
        x, w = np.polynomial.legendre.leggauss(nodes)
        u = 0.5 * (x + 1.0)
        return self.quantile(u), 0.5 * w


DISTRIBUTIONS: dict[str, BiasDistribution] = {"tardos": TardosArcsine()}


def get_distribution(dist: str | BiasDistribution) -> BiasDistribution:
    if isinstance(dist, BiasDistribution):
        return dist
    try:
        return DISTRIBUTIONS[dist]
    except KeyError:
        raise ParameterError(f"unknown bias distribution {dist!r}") from None


@dataclass(frozen=True)
class CodeParams:
    n: int
    m: int
    dist: str = "tardos"
    seed: int = 0

    def __post_init__(self):
        if int(self.n) < 1:
            raise ParameterError(f"user count n must be >= 1, got {self.n}")
        if int(self.m) < 1:
            raise ParameterError(f"code length m must be >= 1, got {self.m}")
        if not 0 <= int(self.seed) < 2**64:
            raise ParameterError("seed must fit in 64 unsigned bits")
        get_distribution(self.dist)


@dataclass(frozen=True)
class SecretVector:
    p: np.ndarray

    def __post_init__(self):
        p = np.ascontiguousarray(self.p, dtype=np.float64)
        if p.ndim != 1 or p.size == 0:
            raise ParameterError("secret must be a non-empty 1-D sequence")
        if not np.all((p > 0.0) & (p < 1.0)):
            raise ParameterError("secret biases must lie strictly inside (0, 1)")
        p.setflags(write=False)
        object.__setattr__(self, "p", p)

    @property
    def m(self) -> int:
        return self.p.shape[0]

    def __len__(self):
        return self.m


@dataclass(frozen=True)
class CodeMatrix:
    """``n`` codewords of ``m`` bits, packed row-major, LSB-first within a byte."""

    bits: np.ndarray
    params: CodeParams = field(compare=False)

    def __post_init__(self):
        bits = np.ascontiguousarray(self.bits, dtype=np.uint8)
        if bits.shape != (self.params.n, (self.params.m + 7) // 8):
            raise ParameterError(f"packed shape {bits.shape} does not match n={self.params.n}, m={self.params.m}")
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    @property
    def n(self) -> int:
        return self.params.n

    @property
    def m(self) -> int:
        return self.params.m

    def rows(self, users=None) -> np.ndarray:
        """Unpacked 0/1 rows (uint8) for ``users`` (all users by default)."""
        packed = self.bits if users is None else self.bits[np.asarray(users, dtype=np.intp)]
        return unpack(packed, self.m)

    def packed_rows(self, users) -> np.ndarray:
        return np.ascontiguousarray(self.bits[np.asarray(users, dtype=np.intp)])

    def column_sums(self, users) -> np.ndarray:
        users = list(users)
        if not users:
            return np.zeros(self.m, dtype=np.int64)
        return self.rows(users).sum(axis=0, dtype=np.int64)


def pack(rows: np.ndarray) -> np.ndarray:
    rows = np.atleast_2d(np.asarray(rows, dtype=np.uint8))
    return np.packbits(rows, axis=1, bitorder="little")


def unpack(packed: np.ndarray, m: int) -> np.ndarray:
    packed = np.atleast_2d(np.asarray(packed, dtype=np.uint8))
    return np.unpackbits(packed, axis=1, count=m, bitorder="little")


def sample_secret(params: CodeParams) -> SecretVector:
    dist = get_distribution(params.dist)
    u = uniforms(derive_key(params.seed, "secret"), 0, params.m)
    p = np.clip(dist.quantile(u), P_MIN, 1.0 - P_MIN)
    return SecretVector(p)


def sample_code(params: CodeParams, secret: SecretVector) -> CodeMatrix:
    if secret.m != params.m:
        raise ParameterError(f"secret length {secret.m} != code length {params.m}")
    keys = row_keys(derive_key(params.seed, "code"), np.arange(params.n))
    return CodeMatrix(kernels.code_bits(keys, secret.p), params)


def generate(params: CodeParams) -> tuple[CodeMatrix, SecretVector]:
    secret = sample_secret(params)
    return sample_code(params, secret), secret


def fresh_codewords(secret: SecretVector, count: int, key: int) -> np.ndarray:
    """``count`` unpacked codewords drawn from the code distribution under ``key``."""
    keys = row_keys(key, np.arange(count))
    return unpack(kernels.code_bits(keys, secret.p), secret.m)


# -- code file -----------------------------------------------------------------
#
#   magic  "TRDC"
#   u16    version word: low byte = format version (1); bit 15 set = secret stripped
#   u64    n, u64 m, u64 seed
#   f64[m] secret biases (absent when stripped)
#   n rows of ceil(m/8) bytes, LSB-first within each byte
#
# All integers and doubles are little-endian.

CODE_MAGIC = b"TRDC"
CODE_VERSION = 1
STRIPPED = 0x8000
_HEADER = struct.Struct("<4sHQQQ")


def write_code(fh: BinaryIO, code: CodeMatrix, secret: SecretVector | None, strip_secret: bool = False) -> None:
    strip = strip_secret or secret is None
    word = CODE_VERSION | (STRIPPED if strip else 0)
    fh.write(_HEADER.pack(CODE_MAGIC, word, code.n, code.m, code.params.seed))
    if not strip:
        fh.write(np.asarray(secret.p, dtype="<f8").tobytes())
    fh.write(code.bits.tobytes())


def read_code(fh: BinaryIO, require_secret: bool = True, dist: str = "tardos") -> tuple[CodeMatrix, SecretVector | None]:
    head = _read_exact(fh, _HEADER.size, 0, "code header")
    magic, word, n, m, seed = _HEADER.unpack(head)
    if magic != CODE_MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {CODE_MAGIC!r}", 0)
    if word & 0xFF != CODE_VERSION:
        raise FormatError(f"unsupported code file version {word & 0xFF}", 4)
    if n < 1 or m < 1:
        raise FormatError(f"invalid dimensions n={n}, m={m}", 6)
    offset = _HEADER.size
    secret = None
    if word & STRIPPED:
        if require_secret:
            raise SecretMissingError("secret missing: this code file was written with the secret stripped", offset)
    else:
        raw = _read_exact(fh, 8 * m, offset, "secret")
        p = np.frombuffer(raw, dtype="<f8").astype(np.float64)
        if not np.all((p > 0) & (p < 1)):
            bad = int(np.argmin((p > 0) & (p < 1)))
            raise FormatError("secret bias outside (0, 1)", offset + 8 * bad)
        secret = SecretVector(p)
        offset += 8 * m
    rowbytes = (m + 7) // 8
    raw = _read_exact(fh, n * rowbytes, offset, "codeword rows")
    bits = np.frombuffer(raw, dtype=np.uint8).reshape(n, rowbytes).copy()
    return CodeMatrix(bits, CodeParams(int(n), int(m), dist, int(seed))), secret


def _read_exact(fh: BinaryIO, size: int, offset: int, what: str) -> bytes:
    data = fh.read(size)
    if len(data) != size:
        raise FormatError(f"truncated {what}: expected {size} bytes, got {len(data)}", offset + len(data))
    return data


def code_to_bytes(code: CodeMatrix, secret: SecretVector | None, strip_secret: bool = False) -> bytes:
    buf = io.BytesIO()
    write_code(buf, code, secret, strip_secret)
    return buf.getvalue()


def mean_binary_entropy(p: np.ndarray) -> float:
    """Sample mean of ``h_b(p_i)`` in bits."""
    p = np.asarray(p, dtype=np.float64)
    h = -(p * np.log2(p) + (1 - p) * np.log2(1 - p))
    return float(h.mean())


def typical_set_log2_size(m: int, dist: str = "tardos") -> float:
    d = get_distribution(dist)
    x, w = d.quadrature(128)
    h = -(x * np.log2(x) + (1 - x) * np.log2(1 - x))
    return m * float(np.dot(w, h))


__all__ = [
    "BiasDistribution", "TardosArcsine", "DISTRIBUTIONS", "get_distribution", "CodeParams",
    "SecretVector", "CodeMatrix", "pack", "unpack", "sample_secret", "sample_code", "generate",
    "fresh_codewords", "write_code", "read_code", "code_to_bytes", "mean_binary_entropy",
    "P_MIN", "typical_set_log2_size",
]
