"""Success rate and completion-time evaluation, trajectory export.

An evaluation episode ends once ``clicks_per_episode`` trials have resolved
(success or timeout), so every episode contributes the same number of
trials whether or not the policy ever presses a button.
"""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .arm import ArmParams, ArmState
from .env import N_BUTTONS, ChoiceReactionEnv, EnvConfig, Observation, StepSnapshot, Status
from .reward import EffortNormalizer, RewardBreakdown, RewardSpec, composite

SUCCESS = "success"
TIMEOUT = "timeout"


@dataclass(frozen=True)
class TrialRecord:
    target: int
    outcome: str
    duration: float


@dataclass
class StepRecord:
    obs: np.ndarray
    u: np.ndarray
    reward: RewardBreakdown
    snapshot: StepSnapshot
    status: Status
    state: ArmState
    fingertip: np.ndarray


@dataclass
class EpisodeLog:
    seed: int
    steps: list[StepRecord] = field(default_factory=list)
    trial_records: list[TrialRecord] = field(default_factory=list)


@dataclass
class Metrics:
    success_rate: float
    mean_completion_time: float
    per_button_success: list[float | None]
    per_button_trials: list[int]
    n_trials: int
    n_successes: int
    # mean over successful trials only (None when there are none)
    mean_success_time: float | None

    def to_dict(self) -> dict:
        return asdict(self)


def mean_completion_time(trial_records: Sequence[TrialRecord]) -> float:
    """Mean trial duration, timeouts counted at their full duration (the cap)."""
    if not trial_records:
        raise ValueError("no trial records")
    return math.fsum(r.duration for r in trial_records) / len(trial_records)


def compute_metrics(trial_records: Sequence[TrialRecord]) -> Metrics:
    if not trial_records:
        raise ValueError("no trial records")
    n = len(trial_records)
    succ = [r for r in trial_records if r.outcome == SUCCESS]
    per_rate: list[float | None] = []
    per_n: list[int] = []
    for b in range(N_BUTTONS):
        rows = [r for r in trial_records if r.target == b]
        per_n.append(len(rows))
        per_rate.append(sum(r.outcome == SUCCESS for r in rows) / len(rows) if rows else None)
    return Metrics(
        success_rate=len(succ) / n,
        mean_completion_time=mean_completion_time(trial_records),
        per_button_success=per_rate,
        per_button_trials=per_n,
        n_trials=n,
        n_successes=len(succ),
        mean_success_time=mean_completion_time(succ) if succ else None,
    )


Policy = Callable[[Observation], np.ndarray]


def as_policy(params) -> Policy:
    """Wrap trained parameters as a deterministic observation -> command map."""
    if callable(params) and not hasattr(params, "actor"):
        return params
    from .ppo import act

    return lambda obs: act(params, obs, deterministic=True)


def episode_seeds(seed: int, episodes: int) -> list[int]:
    return [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(episodes)]


def run_episode(policy: Policy, spec: RewardSpec, seed: int, clicks_per_episode: int = 10,
                env_config: EnvConfig | None = None, norm: EffortNormalizer | None = None) -> EpisodeLog:
    config = env_config or EnvConfig()
    env = ChoiceReactionEnv(config)
    obs = env.reset(seed)
    log = EpisodeLog(seed=seed)
    while True:
        u = np.clip(np.asarray(policy(obs), dtype=np.float64), 0.0, 1.0)
        vec = obs.vector()
        obs, snap, status = env.step(u)
        rb = composite(spec, snap, norm)
        log.steps.append(StepRecord(obs=vec, u=u, reward=rb, snapshot=snap, status=status, state=env.arm_state,
                                    fingertip=env.fingertip))
        if status in (Status.TRIAL_SUCCESS, Status.EPISODE_DONE):
            log.trial_records.append(TrialRecord(int(snap.target), SUCCESS, float(snap.trial_time)))
        elif status == Status.TRIAL_TIMEOUT:
            log.trial_records.append(TrialRecord(int(snap.target), TIMEOUT, float(snap.trial_time)))
        if status == Status.EPISODE_DONE or len(log.trial_records) >= clicks_per_episode:
            return log


def evaluate(params, spec: RewardSpec, episodes: int = 5, clicks_per_episode: int = 10, seed: int = 0,
             env_config: EnvConfig | None = None, norm: EffortNormalizer | None = None) -> tuple[Metrics, list[EpisodeLog]]:
    """Run fresh seeded episodes with the deterministic policy and aggregate."""
    config = env_config or EnvConfig()
    if config.clicks_per_episode != clicks_per_episode:
        from dataclasses import replace

        config = replace(config, clicks_per_episode=clicks_per_episode)
    policy = as_policy(params)
    logs = [run_episode(policy, spec, s, clicks_per_episode, config, norm) for s in episode_seeds(seed, episodes)]
    records = [r for lg in logs for r in lg.trial_records]
    return compute_metrics(records), logs


class ZeroPolicy:
    def __call__(self, obs: Observation) -> np.ndarray:
        return np.zeros(6)


class ScriptedReacher:
    """Feedback controller that reaches and presses the stimulus button.

    Elbow-up inverse kinematics to the button centre, joint PD plus gravity
    compensation, torques split onto the mono-articular muscle pairs.
    """

    def __init__(self, config: EnvConfig | None = None, kp=(60.0, 30.0), kd=(8.0, 3.0)):
        self.config = config or EnvConfig()
        self.kp = np.asarray(kp)
        self.kd = np.asarray(kd)

    def inverse_kinematics(self, point) -> np.ndarray:
        L1, L2 = self.config.arm.link_lengths
        x, y = point
        c2 = np.clip((x * x + y * y - L1 * L1 - L2 * L2) / (2 * L1 * L2), -1.0, 1.0)
        q2 = math.acos(c2)
        q1 = math.atan2(y, x) - math.atan2(L2 * math.sin(q2), L1 + L2 * math.cos(q2))
        return np.array([q1, q2])

    def gravity_torque(self, q) -> np.ndarray:
        p: ArmParams = self.config.arm
        L1, L2 = p.link_lengths
        m1, m2 = p.link_masses
        g = p.gravity
        c1, c12 = math.cos(q[0]), math.cos(q[0] + q[1])
        return np.array([(m1 * L1 / 2 + m2 * L1) * g * c1 + m2 * L2 / 2 * g * c12, m2 * L2 / 2 * g * c12])

    def __call__(self, obs: Observation) -> np.ndarray:
        target = int(np.argmax(obs.stimulus))
        q_des = self.inverse_kinematics(self.config.layout.center_of(target))
        tau = self.kp * (q_des - obs.q) - self.kd * obs.qdot + self.gravity_torque(obs.q)
        p = self.config.arm
        x = tau / (p.moment_arm * p.max_force)
        u = np.zeros(6)
        u[0], u[1] = max(0.0, x[0]), max(0.0, -x[0])
        u[2], u[3] = max(0.0, x[1]), max(0.0, -x[1])
        return np.clip(u, 0.0, 1.0)


TRAJECTORY_COLUMNS = (
    ["step", "t", "q1", "q2", "qdot1", "qdot2"]
    + [f"act{i}" for i in range(1, 7)]
    + [f"u{i}" for i in range(1, 7)]
    + ["tip_x", "tip_y", "dist", "target", "trial_time", "pressed_correct", "pressed_wrong"]
    + ["bonus", "distance", "effort", "reward", "status"]
)


def _fmt(x) -> str:
    return repr(float(x))


def _trajectory_rows(log: EpisodeLog):
    for k, s in enumerate(log.steps):
        snap = s.snapshot
        st = s.state
        yield (
            [str(k), _fmt(st.t), *map(_fmt, st.q), *map(_fmt, st.qdot), *map(_fmt, st.act), *map(_fmt, s.u)]
            + [_fmt(s.fingertip[0]), _fmt(s.fingertip[1]), _fmt(snap.dist), str(int(snap.target)), _fmt(snap.trial_time)]
            + [str(int(bool(snap.pressed_correct))), str(int(bool(snap.pressed_wrong)))]
            + [_fmt(s.reward.bonus_term), _fmt(s.reward.distance_term), _fmt(s.reward.effort_term), _fmt(s.reward.total)]
            + [Status(s.status).name.lower()]
        )


def export_trajectories(logs: Sequence[EpisodeLog], path: str | Path, svg: bool = False,
                        layout=None) -> list[Path]:
    """Write one CSV per episode (and optionally one SVG fingertip path per trial)."""
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for e, log in enumerate(logs):
        f = out / f"episode_{e:03d}.csv"
        with f.open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRAJECTORY_COLUMNS)
            w.writerows(_trajectory_rows(log))
        written.append(f)
        if svg:
            written.extend(_export_svgs(log, out, e, layout or EnvConfig().layout))
    return written


def _export_svgs(log: EpisodeLog, out: Path, episode: int, layout) -> list[Path]:
    files = []
    trial, pts = 0, []
    scale, ox, oy = 400.0, 300.0, 300.0
    for s in log.steps:
        pts.append(s.fingertip)
        if s.status == Status.RUNNING:
            continue
        poly = " ".join(f"{ox + scale * x:.2f},{oy - scale * y:.2f}" for x, y in pts)
        circles = "".join(
            f'<circle cx="{ox + scale * c[0]:.2f}" cy="{oy - scale * c[1]:.2f}" r="{scale * layout.radius:.2f}" '
            f'fill="{"#d62728" if b == int(s.snapshot.target) else "#cccccc"}"/>'
            for b, c in enumerate(layout.center_of(np.arange(N_BUTTONS)))
        )
        svg = (
            '<svg xmlns="http://www.w3.org/2000/svg" width="600" height="600">'
            f"{circles}<polyline points=\"{poly}\" fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"2\"/></svg>\n"
        )
        f = out / f"episode_{episode:03d}_trial_{trial:02d}.svg"
        f.write_text(svg)
        files.append(f)
        trial += 1
        pts = [s.fingertip]
    return files


def read_trial_records(path: str | Path) -> list[TrialRecord]:
    """Rebuild trial records from an exported trajectory file."""
    records = []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            status = row["status"]
            if status in ("trial_success", "episode_done"):
                records.append(TrialRecord(int(row["target"]), SUCCESS, float(row["trial_time"])))
            elif status == "trial_timeout":
                records.append(TrialRecord(int(row["target"]), TIMEOUT, float(row["trial_time"])))
    return records


def metrics_from_trajectories(paths: Sequence[str | Path]) -> Metrics:
    return compute_metrics([r for p in paths for r in read_trial_records(p)])
