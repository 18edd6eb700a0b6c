import math

import numpy as np
import pytest

from tracekit.codegen import CodeParams, SecretVector, generate
from tracekit.collusion import CollusionChannel, SoftChannel, forge, forge_soft, named_channel, soft_preset
from tracekit.errors import FormatError, ParameterError
from tracekit.inference import (
    ChannelEstimate, SideInfo, channel_from_text, channel_to_text, fit_soft, hard_loglik, hard_threshold,
    mle_hard, soft_loglik,
)

GRID = np.linspace(0, 1, 101)


def _instance(c, m, attack="interleaving", seed=0, n=None):
    code, secret = generate(CodeParams(n or c + 5, m, seed=seed))
    ch = named_channel(attack, c)
    return code, secret, ch, forge(code, list(range(c)), ch, seed).hard


def test_mle_recovers_polynomial_at_true_size():
    code, secret, ch, y = _instance(4, 100_000)
    est = mle_hard(y, secret.p, None, 4)
    assert np.max(np.abs(est.theta_hat.prob_one(GRID) - ch.prob_one(GRID))) < 0.02


def test_mle_infers_equivalence_class_when_cmax_larger():
    code, secret, ch, y = _instance(2, 100_000, attack="coin-flip", seed=1)
    est = mle_hard(y, secret.p, None, 8)
    assert est.c_max == 8
    assert np.max(np.abs(est.theta_hat.prob_one(GRID) - ch.prob_one(GRID))) < 0.02


def test_mle_history_is_monotone():
    code, secret, ch, y = _instance(3, 20_000, attack="majority", seed=2)
    est = mle_hard(y, secret.p, None, 5)
    h = np.array(est.history)
    assert np.all(np.diff(h) >= -1e-7 * max(1.0, abs(h[-1])))
    assert est.loglik == pytest.approx(hard_loglik(y, secret.p, None, est.theta_hat), rel=1e-12)


def test_mle_beats_truth_in_likelihood():
    code, secret, ch, y = _instance(4, 5000, seed=3)
    est = mle_hard(y, secret.p, None, 4)
    assert est.loglik >= hard_loglik(y, secret.p, None, ch) - 1e-6


def test_mle_all_ones_trace():
    p = generate(CodeParams(1, 2000, seed=4))[1].p
    est = mle_hard(np.ones(2000, np.uint8), p, None, 4)
    assert np.all(est.theta_hat.theta[1:] > 0.999)
    assert math.isfinite(est.loglik)


def test_mle_with_side_information():
    code, secret, ch, y = _instance(3, 50_000, seed=5)
    si = SideInfo.from_users(code, [0])
    est = mle_hard(y, secret.p, si, 3)
    assert np.max(np.abs(est.theta_hat.theta - ch.theta)) < 0.05


def test_side_information_raises_true_model_likelihood():
    code, secret, ch, y = _instance(4, 20_000, seed=6)
    plain = hard_loglik(y, secret.p, None, ch)
    informed = hard_loglik(y, secret.p, SideInfo.from_users(code, [0, 1]), ch)
    assert informed >= plain


def test_mle_rejects_full_side_information():
    code, secret, ch, y = _instance(3, 100)
    with pytest.raises(ParameterError):
        mle_hard(y, secret.p, SideInfo.from_users(code, [0, 1, 2]), 3)


def test_side_info_validation():
    with pytest.raises(ParameterError):
        SideInfo((1,), np.array([0, 2]))
    code, _ = generate(CodeParams(5, 10, seed=1))
    with pytest.raises(ParameterError):
        SideInfo.from_users(code, [1, 1])
    si = SideInfo.empty(10).extended(code, [2, 3])
    assert si.n_si == 2 and np.array_equal(si.delta, code.column_sums([2, 3]))


def test_hard_threshold_examples():
    assert hard_threshold([-0.3, 0.0, 2.1]).tolist() == [0, 1, 1]
    assert hard_threshold(-np.linspace(0.1, 5, 20)).tolist() == [0] * 20


def test_hard_threshold_noiseless_model_one():
    code, _ = generate(CodeParams(4, 3000, seed=7))
    ch = SoftChannel("I", 3, [-1, -0.4, 0.6, 1], 1e-12)
    tr = forge_soft(code, [0, 1, 2], ch, seed=1)
    phi = code.rows([0, 1, 2]).sum(axis=0)
    z = ch.mu[phi]
    assert np.array_equal(hard_threshold(tr.soft), (z >= 0).astype(np.uint8))


def test_soft_fit_averaging_model_one():
    code, secret = generate(CodeParams(10, 10_000, seed=8))
    ch = soft_preset("averaging", 6, 0.25)
    tr = forge_soft(code, range(6), ch, seed=8)
    est = fit_soft(tr.soft, secret.p, None, 6)
    assert est.model == "I"
    assert abs(est.chosen.noise_var - 0.25) <= 0.03
    assert est.loglik_I >= soft_loglik(ch, tr.soft, secret.p, None) - 1e-6


@pytest.mark.xfail(reason="the fitted means sit about 0.1 from the truth at m=1e4 although their "
                          "likelihood exceeds the true one: the interior means are weakly identified",
                   strict=False)
def test_soft_fit_averaging_means_within_005():
    code, secret = generate(CodeParams(10, 10_000, seed=8))
    ch = soft_preset("averaging", 6, 0.25)
    tr = forge_soft(code, range(6), ch, seed=8)
    est = fit_soft(tr.soft, secret.p, None, 6)
    assert np.max(np.abs(est.chosen.mu - ch.mu)) < 0.05


def test_soft_fit_interleaving_model_two():
    code, secret = generate(CodeParams(10, 4096, seed=9))
    ch = SoftChannel("II", 4, named_channel("interleaving", 4).theta, 1.0)
    tr = forge_soft(code, range(4), ch, seed=9)
    est = fit_soft(tr.soft, secret.p, None, 4)
    assert est.model == "II"
    assert est.loglik_II > est.loglik_I


def test_soft_fit_noiseless_flags_floor():
    code, secret, ch, y = _instance(3, 3000, seed=10)
    est = fit_soft(2.0 * y - 1.0, secret.p, None, 3)
    assert est.model == "II"
    assert est.floored


def test_soft_fit_symmetry():
    code, secret = generate(CodeParams(6, 3000, seed=11))
    ch = SoftChannel("II", 3, [0, 0.2, 0.9, 1], 0.5)
    tr = forge_soft(code, range(3), ch, seed=11)
    si = SideInfo.from_users(code, [0])
    a = fit_soft(tr.soft, secret.p, si, 3)
    flipped = SideInfo(si.users, si.n_si - si.delta)
    b = fit_soft(-tr.soft, SecretVector(1 - secret.p), flipped, 3)
    assert a.loglik_I == pytest.approx(b.loglik_I, abs=1e-6)
    assert a.loglik_II == pytest.approx(b.loglik_II, abs=1e-6)
    np.testing.assert_allclose(b.fit_II.theta, 1 - a.fit_II.theta[::-1], atol=1e-4)


def test_soft_loglik_at_fit_matches_reported():
    code, secret = generate(CodeParams(6, 2000, seed=12))
    tr = forge_soft(code, range(4), soft_preset("set-to-0", 4, 0.5), seed=12)
    est = fit_soft(tr.soft, secret.p, None, 4)
    assert soft_loglik(est.fit_I, tr.soft, secret.p) == pytest.approx(est.loglik_I, rel=1e-9)
    assert soft_loglik(est.fit_II, tr.soft, secret.p) == pytest.approx(est.loglik_II, rel=1e-9)


def test_channel_text_round_trip():
    hard = ChannelEstimate(CollusionChannel([0, 0.25, 1]), -12.5)
    text = channel_to_text(hard)
    assert text.splitlines()[0] == "model hard"
    assert np.allclose(channel_from_text(text).theta, [0, 0.25, 1])
    soft = SoftChannel("I", 2, [-1, 0.1, 1], 0.3)
    back = channel_from_text(channel_to_text(soft))
    assert back.model == "I" and np.allclose(back.mu, soft.mu) and back.noise_var == pytest.approx(0.3)
    with pytest.raises(FormatError):
        channel_from_text("model II\nc_max 2\n")
