import random

import numpy as np
import pytest

from rewardlab.env import EnvConfig, Status
from rewardlab.evaluation import (
    SUCCESS,
    TIMEOUT,
    TRAJECTORY_COLUMNS,
    ScriptedReacher,
    TrialRecord,
    ZeroPolicy,
    compute_metrics,
    episode_seeds,
    evaluate,
    export_trajectories,
    mean_completion_time,
    metrics_from_trajectories,
)
from rewardlab.reward import RewardSpec

SPEC = RewardSpec(bonus_b=8)


@pytest.fixture(scope="module")
def scripted():
    return evaluate(ScriptedReacher(), SPEC, episodes=5, clicks_per_episode=10, seed=0)


@pytest.fixture(scope="module")
def zero():
    return evaluate(ZeroPolicy(), SPEC, episodes=5, clicks_per_episode=10, seed=0)


class TestCompletionTime:
    def test_success_and_timeout(self):
        recs = [TrialRecord(0, SUCCESS, 1.0), TrialRecord(1, TIMEOUT, 4.0)]
        assert mean_completion_time(recs) == 2.5

    def test_all_timeouts(self):
        assert mean_completion_time([TrialRecord(0, TIMEOUT, 4.0)] * 7) == 4.0

    def test_mean(self):
        recs = [TrialRecord(0, SUCCESS, t) for t in (0.2, 0.4, 0.6)]
        assert mean_completion_time(recs) == pytest.approx(0.4, abs=1e-15)

    def test_constant_half_second_oracle(self):
        recs = [TrialRecord(i % 4, SUCCESS, 0.5) for i in range(50)]
        m = compute_metrics(recs)
        assert m.success_rate == 1.0 and m.mean_completion_time == 0.5

    def test_empty(self):
        with pytest.raises(ValueError):
            mean_completion_time([])


class TestProtocol:
    def test_zero_policy(self, zero):
        m, logs = zero
        assert m.success_rate == 0.0
        assert m.mean_completion_time == 4.0
        assert m.n_trials == 50 and m.mean_success_time is None

    def test_scripted_oracle(self, scripted):
        m, logs = scripted
        assert m.success_rate == 1.0
        assert m.n_trials == 50
        assert 0 < m.mean_completion_time < 4.0

    def test_trial_records_match_statuses(self, scripted):
        _, logs = scripted
        for lg in logs:
            resolved = [s for s in lg.steps if s.status != Status.RUNNING]
            assert len(resolved) == len(lg.trial_records)
            assert lg.steps[-1].status == Status.EPISODE_DONE
            for r in lg.trial_records:
                assert 0 < r.duration <= 4.0

    def test_timeouts_last_four_seconds(self, zero):
        _, logs = zero
        for lg in logs:
            assert len(lg.steps) == 10 * 200
            assert all(r.outcome == TIMEOUT and r.duration == 4.0 for r in lg.trial_records)

    def test_per_button_average(self, scripted):
        m, _ = scripted
        rates = [(r or 0.0) * n for r, n in zip(m.per_button_success, m.per_button_trials)]
        assert sum(rates) / sum(m.per_button_trials) == pytest.approx(m.success_rate)

    def test_order_invariance(self):
        rng = random.Random(0)
        recs = [TrialRecord(rng.randrange(4), rng.choice([SUCCESS, TIMEOUT]), rng.uniform(0.1, 4)) for _ in range(60)]
        shuffled = recs[:]
        rng.shuffle(shuffled)
        a, b = compute_metrics(recs), compute_metrics(shuffled)
        assert a.success_rate == b.success_rate and a.per_button_success == b.per_button_success

    def test_seeds_reproducible(self):
        assert episode_seeds(3, 5) == episode_seeds(3, 5)
        assert len(set(episode_seeds(3, 5))) == 5

    def test_short_episodes(self):
        m, logs = evaluate(ZeroPolicy(), SPEC, episodes=2, clicks_per_episode=3, seed=1)
        assert m.n_trials == 6 and all(len(lg.trial_records) == 3 for lg in logs)

    def test_env_config_override(self):
        cfg = EnvConfig(trial_timeout=1.0)
        m, _ = evaluate(ZeroPolicy(), SPEC, episodes=1, clicks_per_episode=2, env_config=cfg)
        assert m.mean_completion_time == 1.0


class TestExport:
    def test_files_and_rows(self, scripted, tmp_path):
        _, logs = scripted
        files = export_trajectories(logs, tmp_path)
        assert [f.name for f in files] == [f"episode_{i:03d}.csv" for i in range(5)]
        for f, lg in zip(files, logs):
            lines = f.read_text().splitlines()
            assert lines[0].split(",") == TRAJECTORY_COLUMNS
            assert len(lines) - 1 == len(lg.steps)

    def test_reexport_identical(self, scripted, tmp_path):
        _, logs = scripted
        a = export_trajectories(logs, tmp_path / "a")
        b = export_trajectories(logs, tmp_path / "b")
        for x, y in zip(a, b):
            assert x.read_bytes() == y.read_bytes()

    def test_metrics_round_trip(self, scripted, zero, tmp_path):
        for i, (m, logs) in enumerate((scripted, zero)):
            files = export_trajectories(logs, tmp_path / str(i))
            assert metrics_from_trajectories(files) == m

    def test_svg(self, scripted, tmp_path):
        _, logs = scripted
        files = export_trajectories(logs[:1], tmp_path, svg=True)
        svgs = [f for f in files if f.suffix == ".svg"]
        assert len(svgs) == 10
        assert svgs[0].read_text().startswith("<svg")

    def test_unwritable(self, scripted, tmp_path):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        with pytest.raises(OSError):
            export_trajectories(scripted[1], blocker / "sub")


def test_trained_params_accepted():
    from rewardlab.ppo import ActorCritic

    m, _ = evaluate(ActorCritic(), SPEC, episodes=1, clicks_per_episode=2)
    assert m.n_trials == 2
    assert np.isfinite(m.mean_completion_time)
