import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from rewardlab.env import (
    OBS_DIM,
    ButtonLayout,
    ChoiceReactionBatch,
    ChoiceReactionEnv,
    EnvConfig,
    Status,
    UsageError,
    detect_press,
    distance_to_target,
    observation_scaling,
)
from rewardlab.evaluation import ScriptedReacher

LAYOUT = ButtonLayout.grid()


def drive_to_first_success(seed=0, max_steps=400):
    env = ChoiceReactionEnv()
    obs = env.reset(seed)
    ctrl = ScriptedReacher()
    cmds = []
    for k in range(max_steps):
        u = ctrl(obs)
        cmds.append(u)
        obs, snap, status = env.step(u)
        if status != Status.RUNNING:
            return env, cmds, snap, status, k
    raise AssertionError("scripted reacher never resolved a trial")


class TestLayout:
    def test_default_grid(self):
        c = LAYOUT.centers
        np.testing.assert_allclose(c.mean(axis=0), [0.38, 0.10])
        np.testing.assert_allclose(c[3] - c[0], [0.14, 0.14])
        LAYOUT.validate()

    def test_furthest_button_is_colour_3(self):
        r = np.linalg.norm(LAYOUT.center_of(np.arange(4)), axis=1)
        assert np.argmax(r) == 3

    def test_unreachable_rejected(self):
        bad = ButtonLayout(positions=((0.7, 0.0), (0.3, 0.1), (0.3, 0.3), (0.1, 0.4)))
        with pytest.raises(ValueError, match="annulus"):
            bad.validate()

    def test_overlap_rejected(self):
        bad = ButtonLayout(positions=((0.3, 0.1), (0.31, 0.1), (0.3, 0.3), (0.1, 0.4)))
        with pytest.raises(ValueError, match="overlap"):
            bad.validate()

    def test_round_trip(self):
        assert ButtonLayout.from_dict(LAYOUT.to_dict()) == LAYOUT
        cfg = EnvConfig(press_speed=0.1)
        assert EnvConfig.from_dict(cfg.to_dict()) == cfg

    def test_unknown_env_key(self):
        with pytest.raises(ValueError, match="unknown"):
            EnvConfig.from_dict({"press_sped": 0.1})


class TestDistanceAndPress:
    def test_distance_examples(self):
        assert distance_to_target(LAYOUT.center_of(2), LAYOUT, 2) == 0.0
        p = LAYOUT.center_of(1) + np.array([0.0, 0.025 + 0.1])
        assert distance_to_target(p, LAYOUT, 1) == pytest.approx(0.1, abs=1e-12)
        lay = ButtonLayout(positions=((0.3, 0.25), (0.5, 0.0), (0.3, 0.4), (0.1, 0.45)))
        assert distance_to_target(np.array([0.3, 0.0]), lay, 0) == pytest.approx(0.225, abs=1e-12)

    @given(st.floats(-0.7, 0.7), st.floats(-0.7, 0.7), st.floats(-0.7, 0.7), st.floats(-0.7, 0.7))
    def test_distance_one_lipschitz(self, x1, y1, x2, y2):
        a, b = np.array([x1, y1]), np.array([x2, y2])
        d = abs(distance_to_target(a, LAYOUT, 3) - distance_to_target(b, LAYOUT, 3))
        assert d <= np.linalg.norm(a - b) + 1e-12

    def test_resting_inside_no_press(self):
        c = LAYOUT.center_of(0)
        assert not detect_press(c, c, LAYOUT, 0, 0.02)

    def test_outside_no_press(self):
        c = LAYOUT.center_of(0)
        far = c + np.array([0.1, 0.0])
        assert not detect_press(far + 0.05, far, LAYOUT, 0, 0.02)

    def test_entering_press(self):
        c = LAYOUT.center_of(0)
        # 0.2 m/s straight at the centre: 4 mm per control step
        prev, now = c + np.array([0.026, 0.0]), c + np.array([0.022, 0.0])
        assert detect_press(prev, now, LAYOUT, 0, 0.02)

    def test_slow_entry_no_press(self):
        c = LAYOUT.center_of(0)
        prev, now = c + np.array([0.0255, 0.0]), c + np.array([0.0250, 0.0])
        assert not detect_press(prev, now, LAYOUT, 0, 0.02)


class TestReset:
    def test_same_seed_same_observation(self):
        env = ChoiceReactionEnv()
        a = env.reset(5).vector()
        env.step(np.ones(6) * 0.3)
        b = env.reset(5).vector()
        np.testing.assert_array_equal(a, b)

    def test_start_condition(self):
        env = ChoiceReactionEnv()
        obs = env.reset(1)
        assert not obs.qdot.any() and not obs.act.any()
        np.testing.assert_allclose(obs.q, [-np.pi / 2, 0.0])
        assert obs.trial_clock_norm == 0.0
        assert obs.stimulus.sum() == 1.0

    def test_first_target_uniform(self):
        env = ChoiceReactionEnv()
        counts = np.zeros(4, int)
        for s in range(1000):
            env.reset(s)
            counts[env.target] += 1
        assert np.all((counts >= 200) & (counts <= 300)), counts

    def test_observation_vector(self):
        obs = ChoiceReactionEnv().reset(0)
        v = obs.vector()
        assert v.shape == (OBS_DIM,) and np.all(np.isfinite(v))

    def test_scaling_maps_ranges_to_unit_box(self):
        center, half = observation_scaling()
        assert center.shape == half.shape == (OBS_DIM,)
        assert np.all(half > 0)


class TestStep:
    def test_far_from_buttons_runs(self):
        env = ChoiceReactionEnv()
        env.reset(0)
        _, snap, status = env.step(np.zeros(6))
        assert status == Status.RUNNING
        assert not snap.pressed_correct and not snap.pressed_wrong

    def test_timeout_at_step_200(self):
        env = ChoiceReactionEnv()
        env.reset(0)
        target = env.target
        statuses = [env.step(np.zeros(6))[2] for _ in range(200)]
        assert statuses[:-1] == [Status.RUNNING] * 199
        assert statuses[-1] == Status.TRIAL_TIMEOUT
        assert env.trial_clock == 0.0 and env.target == target

    def test_scripted_press_sets_flag_on_success_step(self):
        env, cmds, snap, status, k = drive_to_first_success(seed=3)
        assert status == Status.TRIAL_SUCCESS
        assert snap.pressed_correct and snap.dist == 0.0
        assert 0 < snap.trial_time <= 4.0

    def test_open_loop_replay(self):
        _, cmds, _, _, k = drive_to_first_success(seed=3)
        env = ChoiceReactionEnv()
        env.reset(3)
        flags = [env.step(u)[1].pressed_correct for u in cmds]
        assert flags == [False] * k + [True]

    def test_target_changes_after_success(self):
        env = ChoiceReactionEnv()
        obs = env.reset(2)
        ctrl = ScriptedReacher()
        changes = 0
        for _ in range(2000):
            before = env.target
            obs, snap, status = env.step(ctrl(obs))
            assert obs.stimulus.sum() == 1.0
            if status == Status.TRIAL_SUCCESS:
                assert env.target != before
                changes += 1
            if status == Status.EPISODE_DONE:
                break
        assert status == Status.EPISODE_DONE
        assert env.presses_done == 10 and changes == 9

    def test_step_after_done_is_usage_error(self):
        env = ChoiceReactionEnv(EnvConfig(clicks_per_episode=1))
        obs = env.reset(0)
        ctrl = ScriptedReacher()
        for _ in range(400):
            obs, _, status = env.step(ctrl(obs))
            if status == Status.EPISODE_DONE:
                break
        with pytest.raises(UsageError):
            env.step(np.zeros(6))

    def test_step_before_reset(self):
        with pytest.raises(UsageError):
            ChoiceReactionEnv().step(np.zeros(6))

    def test_snapshot_finite_differences(self):
        env = ChoiceReactionEnv()
        env.reset(0)
        rng = np.random.default_rng(0)
        prev = env.step(rng.uniform(size=6))[1]
        for _ in range(20):
            snap = env.step(rng.uniform(size=6))[1]
            np.testing.assert_allclose(snap.tau_dot, (snap.tau - prev.tau) / 0.02)
            np.testing.assert_allclose(snap.jerk, (snap.qacc - prev.qacc) / 0.02)
            assert snap.work_inc >= 0 and snap.dist >= 0
            assert not (snap.pressed_correct and snap.pressed_wrong)
            prev = snap

    def test_bit_identical_streams(self):
        rng = np.random.default_rng(9)
        cmds = rng.uniform(size=(300, 6))
        runs = []
        for _ in range(2):
            env = ChoiceReactionEnv()
            env.reset(4)
            runs.append([env.step(u)[1] for u in cmds])
        for a, b in zip(*runs):
            for name in ("tau", "qacc", "jerk", "work_inc", "dist"):
                assert np.asarray(getattr(a, name)).tobytes() == np.asarray(getattr(b, name)).tobytes()


class TestBatch:
    def test_batch_matches_single(self):
        rng = np.random.default_rng(1)
        cmds = rng.uniform(size=(100, 3, 6))
        batch = ChoiceReactionBatch(3)
        batch.reset([10, 11, 12])
        singles = [ChoiceReactionEnv() for _ in range(3)]
        for i, e in enumerate(singles):
            e.reset(10 + i)
        for U in cmds:
            obs_b, snap_b, st_b = batch.step(U)
            for i, e in enumerate(singles):
                obs, snap, st_ = e.step(U[i])
                np.testing.assert_array_equal(obs.vector(), obs_b[i].vector())
                assert snap.dist == snap_b.dist[i] and st_ == st_b[i]

    def test_state_round_trip(self):
        b = ChoiceReactionBatch(2)
        b.reset([0, 1])
        rng = np.random.default_rng(0)
        for _ in range(30):
            b.step(rng.uniform(size=(2, 6)))
        state = b.get_state()
        cmds = rng.uniform(size=(50, 2, 6))
        first = [b.step(U)[0].vector() for U in cmds]
        b.set_state(state)
        second = [b.step(U)[0].vector() for U in cmds]
        for x, y in zip(first, second):
            np.testing.assert_array_equal(x, y)
