import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tracekit.codegen import TardosArcsine
from tracekit.collusion import CollusionChannel, elevate, named_channel
from tracekit.errors import ParameterError
from tracekit.infotheory import (
    RateQuery, bernstein_derivative, mean_entropy_closed_form, one_sided_check, one_sided_gap,
    rate_gradient, rate_joint, rate_single, read_worst_cache, search_worst, worst_channel,
    worst_set, write_worst_cache,
)


def _random_channel(rng, c):
    return CollusionChannel.from_free(rng.uniform(0, 1, c - 1))


def _mc_rate(theta, ell, samples, seed):
    """Monte Carlo of E[log2 P(Y | Phi, p) / P(Y | p)] / ell with Phi ~ Bin(ell, p)."""
    rng = np.random.default_rng(seed)
    theta = np.asarray(theta)
    c = theta.shape[0] - 1
    p = TardosArcsine().quantile(rng.uniform(size=samples))
    phi = rng.binomial(ell, p)
    free = rng.binomial(c - ell, p) if c > ell else 0
    y = rng.uniform(size=samples) < theta[phi + free]
    def cond(f):
        return sum(theta[f + j] * math.comb(c - ell, j) * p**j * (1 - p) ** (c - ell - j) for j in range(c - ell + 1))
    p1_phi = cond(phi)
    p1 = sum(theta[k] * math.comb(c, k) * p**k * (1 - p) ** (c - k) for k in range(c + 1))
    num = np.where(y, p1_phi, 1 - p1_phi)
    den = np.where(y, p1, 1 - p1)
    vals = np.log2(num / den) / ell
    return vals.mean(), vals.std(ddof=1) / math.sqrt(samples)


def test_c1_rate_is_mean_entropy():
    r = rate_single(RateQuery(CollusionChannel([0, 1]), quadrature=64))
    assert abs(r - 0.557) < 1e-3
    assert abs(r - mean_entropy_closed_form()) < 1e-9


def test_joint_c1_equals_single():
    ch = CollusionChannel([0, 1])
    assert rate_joint(RateQuery(ch, subset_size=1)) == pytest.approx(rate_single(RateQuery(ch)), abs=1e-15)


@settings(max_examples=40)
@given(st.integers(2, 8), st.integers(0, 2**32 - 1))
def test_rates_in_unit_interval(c, seed):
    ch = _random_channel(np.random.default_rng(seed), c)
    for ell in (1, c):
        r = rate_joint(RateQuery(ch, subset_size=ell))
        assert -1e-12 <= r <= 1.0


def test_single_rate_matches_monte_carlo():
    ch = named_channel("interleaving", 2)
    mean, se = _mc_rate(ch.theta, 1, 1_000_000, 1)
    assert abs(rate_single(RateQuery(ch)) - mean) < 3 * se


def test_joint_rate_matches_monte_carlo():
    ch = named_channel("interleaving", 3)
    mean, se = _mc_rate(ch.theta, 3, 1_000_000, 2)
    assert abs(rate_joint(RateQuery(ch, subset_size=3)) - mean) < 3 * se


def test_single_rate_below_joint():
    rng = np.random.default_rng(7)
    for _ in range(50):
        c = int(rng.integers(2, 7))
        ch = _random_channel(rng, c)
        assert rate_single(RateQuery(ch)) <= rate_joint(RateQuery(ch, subset_size=c)) + 1e-9


def test_quadrature_doubling_stable():
    rng = np.random.default_rng(8)
    for _ in range(10):
        c = int(rng.integers(2, 7))
        ch = _random_channel(rng, c)
        for ell in (1, c):
            a = rate_joint(RateQuery(ch, subset_size=ell, quadrature=64))
            b = rate_joint(RateQuery(ch, subset_size=ell, quadrature=128))
            assert abs(a - b) < 1e-8


def test_relabelling_invariance():
    rng = np.random.default_rng(9)
    for _ in range(10):
        c = int(rng.integers(2, 7))
        ch = _random_channel(rng, c)
        for ell in (1, c):
            assert rate_joint(RateQuery(ch, subset_size=ell)) == pytest.approx(
                rate_joint(RateQuery(ch.reversed(), subset_size=ell)), abs=1e-12)


def test_gradient_matches_finite_differences():
    ch = CollusionChannel([0, 0.3, 0.6, 0.2, 1])
    g = rate_gradient(ch, ell=2)
    h = 1e-6
    for i in range(3):
        up, dn = ch.theta.copy(), ch.theta.copy()
        up[i + 1] += h
        dn[i + 1] -= h
        fd = (rate_joint(RateQuery(CollusionChannel(up), subset_size=2))
              - rate_joint(RateQuery(CollusionChannel(dn), subset_size=2))) / (2 * h)
        assert g[i] == pytest.approx(fd, abs=1e-6)


def test_query_validation():
    with pytest.raises(ParameterError):
        RateQuery(named_channel("interleaving", 2), subset_size=3)
    with pytest.raises(ParameterError):
        search_worst("tardos", 1)


@pytest.mark.parametrize("c,mode", [(2, "single"), (3, "single"), (4, "joint"), (5, "single")])
def test_worst_channel_feasible(c, mode):
    th = worst_channel("tardos", c, mode).theta
    assert th[0] == 0.0 and th[-1] == 1.0 and th.shape[0] == c + 1


def test_worst_c2_matches_grid_search():
    grid = np.arange(0, 1.0 + 1e-12, 1e-4)
    rates = [rate_single(RateQuery(CollusionChannel([0, g, 1]))) for g in grid]
    best = grid[int(np.argmin(rates))]
    assert abs(worst_channel("tardos", 2).theta[1] - best) < 1e-3


def test_worst_c5_beats_presets():
    r = search_worst("tardos", 5, "single")
    assert r.converged
    for name in ("interleaving", "majority"):
        assert r.rate <= rate_single(RateQuery(named_channel(name, 5)))


def test_worst_joint_beats_interleaving():
    r = search_worst("tardos", 3, "joint")
    assert r.rate <= rate_joint(RateQuery(named_channel("interleaving", 3), subset_size=3)) + 1e-12


def test_worst_single_rates_decrease_with_c():
    rates = [search_worst("tardos", c, "single").rate for c in range(2, 7)]
    assert all(a > b for a, b in zip(rates, rates[1:]))


def test_worst_set_keys():
    ws = worst_set(4)
    assert sorted(ws) == [2, 3, 4]
    assert all(ws[k].c == k for k in ws)


def test_worst_cache_round_trip(tmp_path):
    worst_channel("tardos", 3, "single")
    path = tmp_path / "worst.txt"
    n = write_worst_cache(str(path))
    assert n >= 1
    text = path.read_text().splitlines()
    assert any(line.startswith("3 single 0 ") for line in text)
    assert read_worst_cache(str(path)) == n


def test_worst_cache_malformed(tmp_path):
    from tracekit.errors import FormatError
    path = tmp_path / "bad.txt"
    path.write_text("3 single 0 0.5 1\n")
    with pytest.raises(FormatError):
        read_worst_cache(str(path))


def test_bernstein_derivative_matches_finite_difference():
    ch = CollusionChannel([0, 0.8, 0.1, 1])
    p = np.linspace(0.05, 0.95, 19)
    h = 1e-6
    fd = (ch.prob_one(p + h) - ch.prob_one(p - h)) / (2 * h)
    np.testing.assert_allclose(bernstein_derivative(ch.theta, p), fd, atol=1e-7)


def test_gap_vanishes_at_cmax():
    rep = one_sided_check(named_channel("interleaving", 3), 8)
    assert rep.g_min[-1] == 0.0
    p = (np.arange(1001) + 0.5) / 1001
    ch = named_channel("coin-flip", 3)
    g = one_sided_gap(ch.prob_one(p), bernstein_derivative(ch.theta, p), p, 6, 6)
    assert np.all(g == 0.0)


def test_interleaving_class_rates_decrease():
    rep = one_sided_check(named_channel("interleaving", 3), 8)
    assert rep.k_grid.tolist() == list(range(3, 9))
    assert rep.rates_decreasing
    assert np.all(rep.g_min >= -1e-12)


def test_random_classes_one_sided():
    rng = np.random.default_rng(11)
    for _ in range(20):
        rep = one_sided_check(_random_channel(rng, 3), 6)
        assert np.all(rep.g_min >= -1e-12)


def test_elevated_members_share_polynomial():
    base = named_channel("interleaving", 3)
    p = np.linspace(0, 1, 101)
    for k in range(3, 9):
        np.testing.assert_allclose(elevate(base, k).prob_one(p), p, atol=1e-12)
