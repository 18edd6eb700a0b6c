import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tracekit import _fallback, kernels
from tracekit._rng import Stream, derive_key, splitmix_seed, uniforms, uniforms_2d, row_keys

compiled = kernels.compiled
needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled core not built")


def test_stream_matches_vectorised_uniforms():
    key = derive_key(7, "x")
    st_ = Stream(key)
    seq = np.array([st_.uniform() for _ in range(50)])
    assert np.array_equal(seq, uniforms(key, 0, 50))
    assert np.array_equal(uniforms(key, 10, 5), seq[10:15])


def test_uniforms_2d_rows_are_streams():
    keys = row_keys(derive_key(3, "code"), np.arange(4))
    u = uniforms_2d(keys, 20)
    for j in range(4):
        assert np.array_equal(u[j], uniforms(int(keys[j]), 0, 20))


def test_derive_key_labels_separate_streams():
    assert derive_key(1, "a") != derive_key(1, "b")
    assert derive_key(1, "a") != derive_key(2, "a")
    assert derive_key(1, "a", 3) == derive_key(1, "a", 3)
    assert splitmix_seed(5, 0) != splitmix_seed(5, 1)


def test_uniforms_look_uniform():
    u = uniforms(derive_key(0, "u"), 0, 200_000)
    assert 0.0 <= u.min() and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 4 * math.sqrt(1 / 12 / u.size)


def test_implementation_tag():
    assert kernels.IMPLEMENTATION in ("compiled", "python")
    assert _fallback.IMPLEMENTATION == "python"


def _fixture(m=37, n=9, K=2, t=2, seed=0):
    rng = np.random.default_rng(seed)
    p = rng.uniform(0.05, 0.95, m)
    w = rng.normal(size=(m, K, t + 1))
    return p, np.ascontiguousarray(w)


@needs_compiled
def test_code_bits_identical():
    p = np.random.default_rng(1).uniform(0.01, 0.99, 77)
    keys = row_keys(derive_key(4, "code"), np.arange(30))
    assert np.array_equal(compiled.code_bits(keys, p), _fallback.code_bits(keys, p))


@needs_compiled
def test_single_scores_identical():
    rng = np.random.default_rng(2)
    packed = rng.integers(0, 256, size=(25, 9), dtype=np.uint8)
    w0, w1 = rng.normal(size=72), rng.normal(size=72)
    np.testing.assert_allclose(compiled.single_scores(packed, w0, w1),
                               _fallback.single_scores(packed, w0, w1), rtol=0, atol=1e-10)


@needs_compiled
@pytest.mark.parametrize("t", [1, 2, 3])
def test_subset_scores_identical(t):
    rng = np.random.default_rng(t)
    rows = rng.integers(0, 2, size=(7, 40), dtype=np.uint8)
    w = np.ascontiguousarray(rng.normal(size=(40, t + 1)))
    a = compiled.subset_scores(rows, w, t, True)
    b = _fallback.subset_scores(rows, w, t, True)
    for x, y in zip(a[:5], b[:5]):
        np.testing.assert_allclose(np.asarray(x), np.asarray(y), atol=1e-10)
    assert a[5] == b[5] == math.comb(7, t)


@needs_compiled
@pytest.mark.parametrize("t,K", [(1, 1), (2, 2)])
def test_splitting_trajectories_identical(t, K):
    p, w = _fixture(m=23, K=K, t=t)
    key = derive_key(9, "threshold")
    a = compiled.splitting(w, p, t, 20, 60, t * 23, key)
    b = _fallback.splitting(w, p, t, 20, 60, t * 23, key)
    np.testing.assert_allclose(np.asarray(a[0]), b[0], atol=1e-9)
    assert tuple(a[1:]) == tuple(b[1:])


@needs_compiled
def test_direct_scores_identical():
    p, w = _fixture(m=19, K=2, t=2)
    key = derive_key(1, "direct")
    np.testing.assert_allclose(compiled.direct_scores(w, p, 2, 50, key),
                               _fallback.direct_scores(w, p, 2, 50, key), atol=1e-10)


@given(st.integers(1, 9).flatmap(lambda s: st.tuples(st.just(s), st.integers(1, s))))
def test_revolving_door_visits_every_subset_once(args):
    s, t = args
    seen = []
    prev = None
    for subset, out_u, in_u in _fallback.revolving_door(s, t):
        assert len(subset) == t and len(set(subset)) == t
        if prev is not None:
            assert set(prev) - set(subset) == {out_u}
            assert set(subset) - set(prev) == {in_u}
        prev = list(subset)
        seen.append(tuple(sorted(subset)))
    assert len(seen) == len(set(seen)) == math.comb(s, t)


@settings(max_examples=25, deadline=None)
@given(st.integers(2, 8), st.integers(1, 3), st.integers(0, 2**32 - 1))
def test_incremental_phi_matches_recomputed(s, t, seed):
    t = min(t, s)
    rng = np.random.default_rng(seed)
    rows = rng.integers(0, 2, size=(s, 16), dtype=np.uint8)
    w = rng.normal(size=(16, t + 1))
    _, _, _, _, scores, _ = kernels.subset_scores(rows, np.ascontiguousarray(w), t, True)
    for sc, (subset, _, _) in zip(scores, _fallback.revolving_door(s, t)):
        phi = rows[subset].sum(axis=0)
        assert abs(sc - w[np.arange(16), phi].sum()) < 1e-9


def test_fallback_selected_by_environment():
    import os
    import subprocess
    import sys
    env = dict(os.environ, TRACEKIT_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from tracekit import kernels; print(kernels.IMPLEMENTATION)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
