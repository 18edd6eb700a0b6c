import io
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tracekit.codegen import CodeParams, generate
from tracekit.collusion import (
    CollusionChannel, PiratedTrace, SoftChannel, elevate, forge, forge_soft, named_channel,
    read_trace, snr_to_noise_var, soft_preset, write_trace,
)
from tracekit.errors import FormatError, ParameterError


def _bernstein(theta, p):
    c = len(theta) - 1
    return sum(theta[k] * math.comb(c, k) * p**k * (1 - p) ** (c - k) for k in range(c + 1))


def _random_channel(rng, c):
    return CollusionChannel.from_free(rng.uniform(0, 1, c - 1))


@pytest.mark.parametrize("name,c,expected", [
    ("majority", 5, [0, 0, 0, 1, 1, 1]),
    ("interleaving", 4, [0, 0.25, 0.5, 0.75, 1]),
    ("coin-flip", 3, [0, 0.5, 0.5, 1]),
    ("minority", 5, [0, 1, 1, 0, 0, 1]),
    ("all-ones", 3, [0, 1, 1, 1]),
])
def test_named_channels(name, c, expected):
    assert named_channel(name, c).theta.tolist() == expected


def test_majority_tie_goes_to_one():
    assert named_channel("majority", 4).theta.tolist() == [0, 0, 1, 1, 1]
    assert named_channel("minority", 4).theta.tolist() == [0, 1, 0, 0, 1]


def test_worst_single_preset_is_feasible():
    th = named_channel("worst-single", 3).theta
    assert th[0] == 0.0 and th[-1] == 1.0


def test_channel_validation():
    with pytest.raises(ParameterError):
        CollusionChannel([0.1, 1.0])
    with pytest.raises(ParameterError):
        CollusionChannel([0.0, 1.2, 1.0])
    with pytest.raises(ParameterError):
        named_channel("nope", 3)
    with pytest.raises(ParameterError):
        SoftChannel("I", 2, [-1, 0, 0.5], 1.0)


def test_reversed_channel():
    ch = CollusionChannel([0, 0.2, 0.7, 1])
    np.testing.assert_allclose(ch.reversed().theta, [0, 0.3, 0.8, 1])


def test_marking_assumption_on_forged_trace():
    code, _ = generate(CodeParams(50, 4000, seed=1))
    col = [3, 17, 29]
    y = forge(code, col, named_channel("coin-flip", 3), seed=5).hard
    phi = code.rows(col).sum(axis=0)
    assert np.all(y[phi == 3] == 1)
    assert np.all(y[phi == 0] == 0)


def test_identical_codewords_reproduced():
    code, _ = generate(CodeParams(4, 300, seed=2))
    bits = code.bits.copy()
    bits[1] = bits[0]
    from tracekit.codegen import CodeMatrix
    twin = CodeMatrix(bits, code.params)
    y = forge(twin, [0, 1], named_channel("coin-flip", 2), seed=1).hard
    assert np.array_equal(y, twin.rows([0])[0])


def test_interleaving_frequencies():
    code, _ = generate(CodeParams(10, 100_000, seed=3))
    col = [0, 1, 2, 3]
    y = forge(code, col, named_channel("interleaving", 4), seed=7).hard
    phi = code.rows(col).sum(axis=0)
    for f in range(5):
        sel = y[phi == f]
        p = f / 4
        assert abs(sel.mean() - p) <= 4 * math.sqrt(p * (1 - p) / sel.size) + 1e-12


def test_forge_is_memoryless_under_permutation():
    code, _ = generate(CodeParams(6, 200, seed=4))
    col = [0, 2, 5]
    ch = named_channel("interleaving", 3)
    y = forge(code, col, ch, seed=3).hard
    # the same per-position draws applied to permuted counts give the permuted output
    from tracekit._rng import derive_key, uniforms
    from tracekit.collusion import apply_channel
    perm = np.random.default_rng(0).permutation(200)
    phi = code.rows(col).sum(axis=0)
    u = uniforms(derive_key(3, "forge"), 0, 200)
    assert np.array_equal(apply_channel(phi[perm], ch.theta, u[perm]), y[perm])


def test_forge_deterministic_and_seed_sensitive():
    code, _ = generate(CodeParams(6, 500, seed=4))
    ch = named_channel("coin-flip", 2)
    a = forge(code, [1, 2], ch, 9).hard
    assert np.array_equal(a, forge(code, [1, 2], ch, 9).hard)
    assert not np.array_equal(a, forge(code, [1, 2], ch, 10).hard)


def test_forge_rejects_bad_colluders():
    code, _ = generate(CodeParams(6, 50, seed=4))
    ch = named_channel("interleaving", 2)
    with pytest.raises(ParameterError):
        forge(code, [1, 1], ch, 0)
    with pytest.raises(ParameterError):
        forge(code, [1, 2, 3], ch, 0)
    with pytest.raises(ParameterError):
        forge(code, [1, 6], ch, 0)


def test_model_one_endpoint_mean():
    m = 100_000
    code, _ = generate(CodeParams(3, m, seed=5))
    var = 0.5
    tr = forge_soft(code, [0, 1], soft_preset("averaging", 2, var), seed=2)
    phi = code.rows([0, 1]).sum(axis=0)
    sel = tr.soft[phi == 0]
    assert abs(sel.mean() + 1) <= 4 * math.sqrt(var / sel.size)
    assert abs(sel.var() - var) < 0.05


def test_soft_presets():
    np.testing.assert_allclose(soft_preset("averaging", 4, 1.0).mu, [-1, -0.5, 0, 0.5, 1])
    np.testing.assert_allclose(soft_preset("set-to-0", 4, 1.0).mu, [-1, 0, 0, 0, 1])


def test_model_two_noiseless_limit_is_antipodal():
    code, _ = generate(CodeParams(5, 2000, seed=6))
    ch = named_channel("interleaving", 3)
    tr = forge_soft(code, [0, 1, 2], SoftChannel("II", 3, ch.theta, 1e-12), seed=3)
    hard = forge(code, [0, 1, 2], ch, seed=3).hard
    np.testing.assert_allclose(tr.soft, 2.0 * hard - 1.0, atol=1e-4)


def test_snr_conversion():
    assert snr_to_noise_var(0.0) == 1.0
    assert abs(snr_to_noise_var(-4.0) - 10 ** 0.4) < 1e-12


def test_elevate_identity():
    ch = CollusionChannel([0, 0.3, 0.9, 1])
    assert np.array_equal(elevate(ch, 3).theta, ch.theta)


def test_elevate_interleaving():
    np.testing.assert_allclose(elevate(named_channel("interleaving", 3), 6).theta, np.arange(7) / 6, atol=1e-15)


def test_elevate_preserves_polynomial():
    rng = np.random.default_rng(1)
    grid = np.linspace(0, 1, 101)
    for _ in range(10):
        ch = _random_channel(rng, 4)
        up = elevate(ch, 8)
        assert np.max(np.abs(_bernstein(up.theta, grid) - _bernstein(ch.theta, grid))) < 1e-12
        assert np.max(np.abs(up.prob_one(grid) - ch.prob_one(grid))) < 1e-12


@settings(max_examples=30)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_elevate_composes(c, seed):
    ch = _random_channel(np.random.default_rng(seed), c)
    a = elevate(elevate(ch, c + 1), c + 2).theta
    np.testing.assert_allclose(a, elevate(ch, c + 2).theta, atol=1e-12)


def test_elevate_down_rejected():
    with pytest.raises(ParameterError):
        elevate(named_channel("interleaving", 3), 2)


def _trace_bytes(trace):
    buf = io.BytesIO()
    write_trace(buf, trace)
    return buf.getvalue()


def test_trace_round_trip():
    code, _ = generate(CodeParams(8, 33, seed=2))
    hard = forge(code, [1, 4], named_channel("majority", 2), 1)
    soft = forge_soft(code, [1, 4], soft_preset("averaging", 2, 0.3), 1)
    both = PiratedTrace(hard=hard.hard, soft=soft.soft, colluders=(1, 4))
    for tr in (hard, soft, both):
        back = read_trace(io.BytesIO(_trace_bytes(tr)))
        assert back.colluders == (1, 4)
        for a, b in ((back.hard, tr.hard), (back.soft, tr.soft)):
            assert (a is None and b is None) or np.array_equal(a, b)


def test_malformed_traces():
    code, _ = generate(CodeParams(8, 10, seed=2))
    raw = _trace_bytes(forge(code, [0, 1], named_channel("majority", 2), 1))
    with pytest.raises(FormatError, match="offset 0"):
        read_trace(io.BytesIO(b"NOPE" + raw[4:]))
    with pytest.raises(FormatError, match="truncated"):
        read_trace(io.BytesIO(raw[:-3]))
    bad = bytearray(raw)
    bad[-2] = 7
    with pytest.raises(FormatError, match=f"offset {len(raw) - 2}"):
        read_trace(io.BytesIO(bytes(bad)))
    bad = bytearray(raw)
    bad[14] = 0
    with pytest.raises(FormatError, match="flags"):
        read_trace(io.BytesIO(bytes(bad)))
