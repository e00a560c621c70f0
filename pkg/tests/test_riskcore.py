import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pudet.errors import InvalidBatchError, InvalidInputError
from pudet.riskcore import (
    LossFunction,
    RiskBatch,
    combine_nn_pu,
    combine_pu,
    compute_risk,
    loss,
    nn_pu_risk,
    pn_risk,
    pu_risk_unclamped,
    risk_score_gradients,
)

EPS = 1e-7
LN2 = math.log(2.0)


# scalar reference implementation, written without numpy
def ref_loss(t, y):
    t = min(max(t, EPS), 1 - EPS)
    return -math.log(t) if y == 1 else -math.log(1 - t)


def ref_mean(ts, y):
    return sum(ref_loss(t, y) for t in ts) / len(ts) if ts else 0.0


def ref_nn_pu(pos, unl, pi):
    corr = ref_mean(unl, -1) - pi * ref_mean(pos, -1)
    return pi * ref_mean(pos, 1) + max(0.0, corr)


scores = st.floats(0.0, 1.0, allow_nan=False)
score_lists = st.lists(scores, min_size=1, max_size=12)
priors = st.floats(0.0, 1.0, allow_nan=False)


class TestLoss:
    def test_midpoint(self):
        assert loss(0.5, 1) == pytest.approx(LN2, abs=1e-12)

    def test_negative_label(self):
        assert loss(0.9, -1) == pytest.approx(-math.log(0.1), abs=1e-12)
        assert loss(0.9, -1) == pytest.approx(2.302585, abs=1e-6)

    def test_clip_boundary(self):
        assert loss(1.0, 1) == pytest.approx(-math.log1p(-1e-7), rel=1e-8)
        assert loss(1.0, 1) == pytest.approx(1e-7, rel=1e-6)

    def test_bad_label(self):
        with pytest.raises(InvalidInputError):
            loss(0.5, 0)

    def test_non_finite(self):
        with pytest.raises(InvalidInputError):
            loss(float("nan"), 1)

    def test_bad_epsilon(self):
        with pytest.raises(InvalidInputError):
            LossFunction(clip_epsilon=0.0)

    @given(scores, st.sampled_from([1, -1]))
    def test_matches_reference(self, t, y):
        assert loss(t, y) == pytest.approx(ref_loss(t, y), abs=1e-12)


class TestPN:
    def test_symmetric(self):
        r = pn_risk(RiskBatch([0.5], [0.5], "negative"))
        assert r.total == pytest.approx(LN2, abs=1e-12)

    def test_perfect_classifier(self):
        r = pn_risk(RiskBatch([1 - EPS], [EPS], "negative"))
        assert r.total == pytest.approx(1e-7, rel=1e-6)

    def test_two_by_two(self):
        # frozen from the scalar reference: 0.5*0.36698459 + 0.5*0.23101773
        r = pn_risk(RiskBatch([0.8, 0.6], [0.3, 0.1], "negative"), (0.5, 0.5))
        assert r.r_p_plus == pytest.approx(0.3669845875401002, abs=1e-12)
        assert r.r_other_minus == pytest.approx(0.23101772979827936, abs=1e-12)
        assert r.total == pytest.approx(0.2990011586691898, abs=1e-12)

    def test_counted_priors(self):
        r = pn_risk(RiskBatch([0.8], [0.3, 0.1, 0.2], "negative"))
        expected = 0.25 * ref_mean([0.8], 1) + 0.75 * ref_mean([0.3, 0.1, 0.2], -1)
        assert r.total == pytest.approx(expected, abs=1e-12)

    def test_empty_side_drops_out(self):
        r = pn_risk(RiskBatch([], [0.3], "negative"), (0.5, 0.5))
        assert r.total == pytest.approx(0.5 * ref_loss(0.3, -1), abs=1e-12)
        assert r.prior == 0.0

    def test_both_empty(self):
        with pytest.raises(InvalidBatchError):
            RiskBatch([], [])

    def test_priors_must_sum_to_one(self):
        with pytest.raises(InvalidInputError):
            pn_risk(RiskBatch([0.5], [0.5], "negative"), (0.5, 0.6))


class TestPU:
    def test_symmetric(self):
        r = pu_risk_unclamped(RiskBatch([0.5], [0.5]), 0.5)
        assert r.total == pytest.approx(LN2, abs=1e-12)

    def test_mean_loss_substitution(self):
        assert combine_pu(0.5, 0.1, 0.2, 0.3) == pytest.approx(0.10, abs=1e-12)

    def test_bad_prior(self):
        with pytest.raises(InvalidInputError):
            pu_risk_unclamped(RiskBatch([0.5], [0.5]), 1.5)


class TestNNPU:
    def test_clamp_inactive(self):
        total, clamp = combine_nn_pu(0.5, 0.1, 0.2, 0.3)
        assert total == pytest.approx(0.10, abs=1e-12)
        assert not clamp

    def test_clamp_active(self):
        total, clamp = combine_nn_pu(0.5, 0.1, 0.1, 0.4)
        assert total == pytest.approx(0.05, abs=1e-12)
        assert clamp

    def test_zero_prior(self):
        b = RiskBatch([0.9, 0.7], [0.2, 0.6, 0.4])
        r = nn_pu_risk(b, 0.0)
        assert r.total == r.r_other_minus
        assert not r.clamp_active

    @given(score_lists, score_lists, priors)
    def test_matches_reference(self, pos, unl, pi):
        r = nn_pu_risk(RiskBatch(pos, unl), pi)
        assert r.total == pytest.approx(ref_nn_pu(pos, unl, pi), abs=1e-12)

    @given(score_lists, score_lists, priors)
    def test_non_negative(self, pos, unl, pi):
        r = nn_pu_risk(RiskBatch(pos, unl), pi)
        assert r.total >= 0.0
        assert r.total >= pi * r.r_p_plus

    @given(score_lists, score_lists, priors, st.randoms(use_true_random=False))
    def test_permutation_invariant(self, pos, unl, pi, rnd):
        a = nn_pu_risk(RiskBatch(pos, unl), pi).total
        pos2, unl2 = list(pos), list(unl)
        rnd.shuffle(pos2)
        rnd.shuffle(unl2)
        assert nn_pu_risk(RiskBatch(pos2, unl2), pi).total == pytest.approx(a, abs=1e-12)

    def test_unclamped_goes_negative(self):
        # confident positives in the unlabeled set, prior over-estimated
        r = pu_risk_unclamped(RiskBatch([0.9, 0.8], [0.05, 0.1]), 0.9)
        assert r.total < 0
        assert nn_pu_risk(RiskBatch([0.9, 0.8], [0.05, 0.1]), 0.9).total >= 0


@settings(max_examples=200)
@given(score_lists, score_lists, st.integers(1, 4), st.integers(1, 6))
def test_mixture_identity(pos, neg, copies, neg_copies):
    # unlabeled = copies of the positives plus copies of the negatives, so
    # the unlabeled negative risk splits exactly into its two components
    unl = pos * copies + neg * neg_copies
    pi = len(pos) * copies / len(unl)
    pu = pu_risk_unclamped(RiskBatch(pos, unl), pi).total
    pn = pn_risk(RiskBatch(pos, neg, "negative"), (pi, 1 - pi)).total
    assert pu == pytest.approx(pn, abs=1e-12)


class TestGradients:
    def test_single_positive(self):
        g_pos, g_other = risk_score_gradients(RiskBatch([0.5], [], "negative"), None, mode="pn")
        assert g_pos[0] == pytest.approx(-2.0, abs=1e-12)
        assert g_other.size == 0

    def test_hard_zero_when_clamped(self):
        b = RiskBatch([0.9, 0.8], [0.05, 0.1])
        assert nn_pu_risk(b, 0.9).clamp_active
        _, g_other = risk_score_gradients(b, 0.9, mode="nn_pu", clamp_policy="hard-zero")
        assert np.all(g_other == 0.0)

    def test_defensive_reverses_correction(self):
        b = RiskBatch([0.9, 0.8], [0.05, 0.1])
        g_pos, g_other = risk_score_gradients(b, 0.9, mode="nn_pu", clamp_policy="defensive")
        # ascent on the unlabeled negative loss pushes those scores up
        assert np.all(g_other < 0)
        assert g_pos.shape == (2,)

    def test_unknown_mode(self):
        with pytest.raises(InvalidInputError):
            risk_score_gradients(RiskBatch([0.5], [0.5]), 0.5, mode="bogus")

    @settings(max_examples=150)
    @given(
        st.lists(st.floats(0.02, 0.98), min_size=1, max_size=6),
        st.lists(st.floats(0.02, 0.98), min_size=1, max_size=6),
        st.floats(0.05, 0.95),
        st.sampled_from(["pn", "pu_unclamped", "nn_pu"]),
    )
    def test_finite_differences(self, pos, other, pi, mode):
        interp = "negative" if mode == "pn" else "unlabeled"
        b = RiskBatch(pos, other, interp)
        prior = pi
        if mode == "nn_pu":
            r = nn_pu_risk(b, pi)
            if abs(r.r_other_minus - pi * r.r_p_minus) < 1e-4:
                return  # too close to the kink for a central difference
        g_pos, g_other = risk_score_gradients(b, prior, mode=mode)
        h = 1e-6

        def f(p, o):
            return compute_risk(RiskBatch(p, o, interp), prior, mode=mode).total

        for i in range(len(pos)):
            up, dn = list(pos), list(pos)
            up[i] += h
            dn[i] -= h
            num = (f(up, other) - f(dn, other)) / (2 * h)
            assert num == pytest.approx(g_pos[i], rel=1e-5, abs=1e-7)
        for i in range(len(other)):
            up, dn = list(other), list(other)
            up[i] += h
            dn[i] -= h
            num = (f(pos, up) - f(pos, dn)) / (2 * h)
            assert num == pytest.approx(g_other[i], rel=1e-5, abs=1e-7)
