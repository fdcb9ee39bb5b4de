import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rewardlab.env import StepSnapshot
from rewardlab.reward import (
    DISTANCE_MODELS,
    EffortNormalizer,
    RewardSpec,
    RewardSpecError,
    bonus,
    composite,
    distance_reward,
    effort_ctc,
    effort_dc,
    effort_ejk,
    effort_jac,
    ejk_components,
)

ID1 = RewardSpec(w_effort=0.8, bonus_b=8, distance_model="exponential", effort_model="EJK", effort_coeffs=(1, 8, 1))
pos = st.floats(1e-6, 10.0, allow_nan=False)
vec6 = st.lists(st.floats(0, 1), min_size=6, max_size=6).map(np.array)
vec2 = st.lists(st.floats(-50, 50), min_size=2, max_size=2).map(np.array)


def snap(**kw):
    base = dict(u=np.zeros(6), tau=np.zeros(2), tau_dot=np.zeros(2), qacc=np.zeros(2), jerk=np.zeros(2),
                work_inc=0.0, dist=0.0, pressed_correct=False, pressed_wrong=False, target=0, trial_time=0.0)
    base.update(kw)
    return StepSnapshot(**base)


class TestBonus:
    def test_examples(self):
        assert bonus(True, 8) == 8
        assert bonus(False, 50) == 0
        assert bonus(True, 0) == 0

    def test_batch(self):
        np.testing.assert_array_equal(bonus(np.array([True, False]), 8.0), [8.0, 0.0])


class TestDistance:
    @pytest.mark.parametrize("model", DISTANCE_MODELS)
    def test_zero_at_target(self, model):
        assert distance_reward(0.0, model) == 0.0

    def test_exponential_value(self):
        assert distance_reward(0.1, "exponential") == pytest.approx((1 - math.exp(-1)) / 10, abs=1e-15)
        assert distance_reward(0.1, "exponential") == pytest.approx(0.063212, abs=1e-6)

    def test_squared_value(self):
        assert distance_reward(0.5, "squared") == 0.25

    def test_negative_rejected(self):
        with pytest.raises(ValueError):
            distance_reward(-0.01, "absolute")

    def test_unknown_model(self):
        with pytest.raises(ValueError):
            distance_reward(0.1, "cubic")

    @pytest.mark.parametrize("model", ["absolute", "squared", "exponential"])
    @given(a=pos, b=pos)
    def test_strictly_increasing(self, model, a, b):
        if a == b:
            return
        lo, hi = sorted((a, b))
        if model == "exponential" and hi > 3:
            # saturated in double precision
            assert distance_reward(lo, model) <= distance_reward(hi, model)
        else:
            assert distance_reward(lo, model) < distance_reward(hi, model)

    @given(pos)
    def test_exponential_bound(self, d):
        assert 0 < distance_reward(d, "exponential") <= 0.1

    def test_exponential_limit(self):
        assert distance_reward(100.0, "exponential") == pytest.approx(0.1, abs=1e-15)

    @given(st.floats(1e-9, 1e-4))
    def test_small_distance_behaviour(self, d):
        assert distance_reward(d, "exponential") == pytest.approx(d, rel=1e-3)
        assert distance_reward(d, "squared") < distance_reward(d, "absolute")


class TestEffort:
    def test_dc_examples(self):
        assert effort_dc(np.zeros(6), 0.1477) == 0
        assert effort_dc(np.eye(6)[0], 0.1477) == pytest.approx(0.1477)
        assert effort_dc(np.ones(6), 0.1477) == pytest.approx(0.8862)

    def test_ctc_examples(self):
        assert effort_ctc(np.zeros(6), np.zeros(2), 0.649, 0.0177) == 0
        assert effort_ctc(np.zeros(6), np.ones(2), 0.649, 0.0177) == pytest.approx(0.0354)
        assert effort_ctc(np.ones(6), np.zeros(2), 0.649, 0.0177) == pytest.approx(3.894)

    def test_jac_examples(self):
        assert effort_jac(np.zeros(6), np.zeros(2), 0.0198, 6.67e-5) == 0
        assert effort_jac(np.zeros(6), np.full(2, 10.0), 0.0198, 6.67e-5) == pytest.approx(0.01334)
        assert effort_jac(np.zeros(6), np.full(2, 10.0), 0.0198, 6.67e-4) == pytest.approx(0.1334)

    def test_ejk_examples(self):
        assert effort_ejk(0.3, 0.3, 0.3, 2, 5, 7) == pytest.approx(0.3)
        assert effort_ejk(1, 0, 0, 1, 8, 1) == pytest.approx(0.1)
        assert effort_ejk(0, 1, 0, 1, 8, 1) == pytest.approx(0.8)

    def test_ejk_zero_sum(self):
        with pytest.raises(ValueError):
            effort_ejk(1, 1, 1, 0, 0, 0)

    def test_ejk_components(self):
        norm = EffortNormalizer()
        assert ejk_components(snap(), norm) == (0.0, 0.0, 0.0)
        assert ejk_components(snap(u=np.ones(6)), norm)[0] == 1.0
        j = math.sqrt(norm.scale_jerk)
        assert ejk_components(snap(jerk=np.array([j, 0.0])), norm)[1] == pytest.approx(1.0)
        assert ejk_components(snap(work_inc=10 * norm.scale_work), norm)[2] == 1.0

    @given(vec6, vec2, st.floats(0, 5), st.floats(0, 5), st.floats(0.1, 4))
    def test_quadratic_and_linear_scaling(self, u, x, c1, c2, k):
        assert effort_ctc(u, k * x, 0, c2) == pytest.approx(k * k * effort_ctc(u, x, 0, c2), rel=1e-9, abs=1e-12)
        assert effort_jac(u, k * x, 0, c2) == pytest.approx(k * k * effort_jac(u, x, 0, c2), rel=1e-9, abs=1e-12)
        assert effort_dc(u, k * c1) == pytest.approx(k * effort_dc(u, c1), rel=1e-9, abs=1e-12)
        assert effort_ctc(u, x, c1, c2) >= 0 and effort_jac(u, x, c1, c2) >= 0

    @given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1), st.floats(0.01, 9), st.floats(0, 9),
           st.floats(0, 9), st.floats(0.1, 10))
    def test_ejk_convex_combination(self, e, j, w, c1, c2, c3, k):
        v = effort_ejk(e, j, w, c1, c2, c3)
        assert min(e, j, w) - 1e-12 <= v <= max(e, j, w) + 1e-12
        assert effort_ejk(e, j, w, k * c1, k * c2, k * c3) == pytest.approx(v, rel=1e-9, abs=1e-12)


class TestComposite:
    def test_id1_press_step(self):
        rb = composite(ID1, snap(pressed_correct=True))
        assert rb.total == 8.0

    def test_id1_non_press(self):
        rb = composite(ID1, snap(dist=0.1))
        assert rb.total == pytest.approx(-(1 - math.exp(-1)) / 10, abs=1e-12)

    def test_weight_elimination(self):
        spec = RewardSpec(w_effort=0.0, bonus_b=8, effort_model="CTC", effort_coeffs=(0.649, 0.0177))
        a = composite(spec, snap(dist=0.2, u=np.ones(6), tau_dot=np.full(2, 30.0)))
        b = composite(spec, snap(dist=0.2))
        assert a.total == b.total

    def test_breakdown_stores_raw_terms(self):
        spec = RewardSpec(w_bonus=2, w_distance=3, w_effort=0.5, bonus_b=8, distance_model="absolute",
                          effort_model="DC", effort_coeffs=(0.1,))
        rb = composite(spec, snap(dist=0.2, u=np.ones(6), pressed_correct=True))
        assert rb.bonus_term == 8 and rb.distance_term == pytest.approx(0.2) and rb.effort_term == pytest.approx(0.6)
        assert rb.total == pytest.approx(2 * 8 - 3 * 0.2 - 0.5 * 0.6, abs=1e-12)

    def test_batched_matches_single(self):
        rng = np.random.default_rng(0)
        n = 7
        batch = snap(u=rng.uniform(size=(n, 6)), tau=rng.normal(size=(n, 2)), tau_dot=rng.normal(size=(n, 2)), qacc=rng.normal(size=(n, 2)),
                     jerk=rng.normal(size=(n, 2)) * 1e4, work_inc=rng.uniform(size=n), dist=rng.uniform(size=n),
                     pressed_correct=rng.uniform(size=n) < 0.3, pressed_wrong=np.zeros(n, bool),
                     target=np.zeros(n, int), trial_time=np.zeros(n))
        rb = composite(ID1, batch)
        for i in range(n):
            assert composite(ID1, batch[i]).total == rb.total[i]

    @given(st.floats(0, 10), st.floats(0, 10), st.floats(0, 10))
    def test_affine_in_weights(self, wb, wd, we):
        s = snap(dist=0.3, u=np.full(6, 0.5), pressed_correct=True)
        spec = RewardSpec(w_bonus=wb, w_distance=wd, w_effort=we, bonus_b=8, effort_model="DC", effort_coeffs=(0.2,))
        rb = composite(spec, s)
        expected = wb * rb.bonus_term - wd * rb.distance_term - we * rb.effort_term
        assert rb.total == pytest.approx(expected, abs=1e-12)


class TestSpec:
    def test_negative_weight(self):
        with pytest.raises(RewardSpecError, match="w_effort"):
            RewardSpec(w_effort=-1.0)

    def test_nan_coefficient(self):
        with pytest.raises(RewardSpecError, match="effort_coeffs"):
            RewardSpec(effort_model="DC", effort_coeffs=(float("nan"),))

    def test_ejk_needs_positive_sum(self):
        with pytest.raises(RewardSpecError):
            RewardSpec(effort_model="EJK", effort_coeffs=(0, 0, 0))

    def test_unknown_model(self):
        with pytest.raises(RewardSpecError, match="distance_model"):
            RewardSpec(distance_model="hyperbolic")

    def test_round_trip(self):
        assert RewardSpec.from_dict(ID1.to_dict()) == ID1

    def test_unknown_key(self):
        with pytest.raises(RewardSpecError, match="unknown"):
            RewardSpec.from_dict({"w_bonus": 1, "w_bonuss": 2})

    def test_normalizer_rejects_zero(self):
        with pytest.raises(ValueError):
            EffortNormalizer(scale_jerk=0.0)
