import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import stats
from scipy.optimize import brentq

from tracekit.codegen import (
    P_MIN, CodeMatrix, CodeParams, SecretVector, TardosArcsine, code_to_bytes, fresh_codewords, generate,
    mean_binary_entropy, pack, read_code, sample_code, sample_secret, unpack, write_code,
)
from tracekit.errors import FormatError, ParameterError, SecretMissingError


def test_bias_symmetry_about_half():
    p = sample_secret(CodeParams(1, 100_000, seed=3)).p
    frac = np.mean(p <= 0.5)
    assert abs(frac - 0.5) <= 4 * math.sqrt(0.25 / p.size)


def test_mean_entropy_of_biases():
    p = sample_secret(CodeParams(1, 1_000_000, seed=4)).p
    assert abs(mean_binary_entropy(p) - 0.557) <= 0.003


@pytest.mark.parametrize("u", [0.1, 0.5, 0.9])
def test_quantile_matches_numeric_beta_inversion(u):
    beta = stats.beta(0.5, 0.5)
    oracle = brentq(lambda x: beta.cdf(x) - u, 1e-15, 1 - 1e-15, xtol=1e-15, rtol=1e-15)
    assert abs(TardosArcsine().quantile(u) - oracle) < 1e-10


def test_biases_pass_ks_against_arcsine():
    p = sample_secret(CodeParams(1, 100_000, seed=5)).p
    assert stats.kstest(p, TardosArcsine().cdf).pvalue > 0.01


def test_biases_clamped():
    p = sample_secret(CodeParams(1, 200_000, seed=6)).p
    assert p.min() >= P_MIN and p.max() <= 1 - P_MIN


def test_column_frequency_at_half():
    n, m = 1000, 64
    code = sample_code(CodeParams(n, m, seed=1), SecretVector(np.full(m, 0.5)))
    freq = code.rows().mean(axis=0)
    assert np.all(np.abs(freq - 0.5) <= 4 * math.sqrt(0.25 / n))


@pytest.mark.parametrize("width", [7, 64, 65])
def test_pack_round_trip(width):
    rows = np.random.default_rng(width).integers(0, 2, size=(11, width), dtype=np.uint8)
    assert np.array_equal(unpack(pack(rows), width), rows)


@given(st.integers(1, 130), st.integers(1, 6), st.integers(0, 2**32 - 1))
def test_pack_round_trip_property(width, n, seed):
    rows = np.random.default_rng(seed).integers(0, 2, size=(n, width), dtype=np.uint8)
    assert np.array_equal(unpack(pack(rows), width), rows)


def test_pack_is_lsb_first():
    assert pack(np.array([[1, 0, 0, 0, 0, 0, 0, 0, 1]]))[0].tolist() == [1, 1]


def test_generation_deterministic():
    params = CodeParams(50, 129, seed=9)
    a, sa = generate(params)
    b, sb = generate(params)
    assert a.bits.tobytes() == b.bits.tobytes()
    assert np.array_equal(sa.p, sb.p)
    c, _ = generate(CodeParams(50, 129, seed=10))
    assert c.bits.tobytes() != a.bits.tobytes()


def test_rows_follow_biases():
    code, secret = generate(CodeParams(4000, 50, seed=2))
    freq = code.rows().mean(axis=0)
    sd = np.sqrt(secret.p * (1 - secret.p) / 4000)
    assert np.all(np.abs(freq - secret.p) <= 5 * sd + 1e-12)


def test_storage_is_packed():
    code, _ = generate(CodeParams(1000, 1000, seed=1))
    assert code.bits.nbytes <= 1.1 * 1000 * 1000 / 8


def test_code_matrix_is_read_only():
    code, secret = generate(CodeParams(5, 16, seed=1))
    with pytest.raises(ValueError):
        code.bits[0, 0] = 1
    with pytest.raises(ValueError):
        secret.p[0] = 0.5


def test_invalid_params():
    with pytest.raises(ParameterError):
        CodeParams(0, 10)
    with pytest.raises(ParameterError):
        CodeParams(10, 10, dist="uniform")
    with pytest.raises(ParameterError):
        SecretVector([0.0, 0.5])
    with pytest.raises(ParameterError):
        CodeMatrix(np.zeros((2, 3), np.uint8), CodeParams(2, 32))


def test_fresh_codewords_never_collide_with_users():
    code, secret = generate(CodeParams(1000, 300, seed=8))
    fresh = fresh_codewords(secret, 20_000, key=123)
    users = {r.tobytes() for r in code.rows()}
    assert not any(r.tobytes() in users for r in fresh)


def test_code_file_round_trip():
    code, secret = generate(CodeParams(13, 77, seed=21))
    code2, secret2 = read_code(io.BytesIO(code_to_bytes(code, secret)))
    assert code2.bits.tobytes() == code.bits.tobytes()
    assert np.array_equal(secret2.p, secret.p)
    assert code2.params.seed == 21


def test_code_file_layout():
    code, secret = generate(CodeParams(3, 10, seed=1))
    raw = code_to_bytes(code, secret)
    assert raw[:4] == b"TRDC"
    assert int.from_bytes(raw[4:6], "little") == 1
    assert len(raw) == 4 + 2 + 24 + 8 * 10 + 3 * 2


def test_stripped_secret():
    code, secret = generate(CodeParams(3, 10, seed=1))
    raw = code_to_bytes(code, secret, strip_secret=True)
    with pytest.raises(SecretMissingError, match="secret missing"):
        read_code(io.BytesIO(raw))
    code2, s2 = read_code(io.BytesIO(raw), require_secret=False)
    assert s2 is None and code2.bits.tobytes() == code.bits.tobytes()


def test_malformed_code_files_report_offsets():
    code, secret = generate(CodeParams(3, 10, seed=1))
    raw = code_to_bytes(code, secret)
    with pytest.raises(FormatError, match="offset 0"):
        read_code(io.BytesIO(b"XXXX" + raw[4:]))
    with pytest.raises(FormatError, match="truncated"):
        read_code(io.BytesIO(raw[:-1]))
    with pytest.raises(FormatError, match="offset 4"):
        read_code(io.BytesIO(raw[:4] + b"\x07\x00" + raw[6:]))
    bad = bytearray(raw)
    bad[30 + 8 * 2: 30 + 8 * 3] = np.float64(1.5).tobytes()
    with pytest.raises(FormatError, match=f"offset {30 + 16}"):
        read_code(io.BytesIO(bytes(bad)))


def test_write_code_to_stream():
    code, secret = generate(CodeParams(2, 9, seed=1))
    buf = io.BytesIO()
    write_code(buf, code, secret)
    assert buf.getvalue() == code_to_bytes(code, secret)
