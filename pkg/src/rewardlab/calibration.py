"""Frozen EJK normalization scales.

The scales are the 99th percentiles of squared joint jerk and of per-step
unsigned joint work observed under uniform random muscle commands. They are
computed once and frozen in :mod:`rewardlab.reward`; this module reproduces
them.
"""

from __future__ import annotations

import numpy as np

from .env import ChoiceReactionBatch, EnvConfig, Status

CALIBRATION_SEED = 12345
CALIBRATION_STEPS = 20_000
CALIBRATION_ENVS = 8


def calibrate(
    config: EnvConfig | None = None,
    n_steps: int = CALIBRATION_STEPS,
    n_envs: int = CALIBRATION_ENVS,
    seed: int = CALIBRATION_SEED,
    percentile: float = 99.0,
) -> tuple[float, float]:
    """Return ``(scale_jerk, scale_work)`` under a uniform random policy."""
    config = config or EnvConfig()
    rng = np.random.default_rng(seed)
    env = ChoiceReactionBatch(n_envs, config)
    env.reset(rng.integers(2**31, size=n_envs))
    jerk_sq, work = [], []
    for _ in range(n_steps // n_envs):
        _, snap, status = env.step(rng.uniform(0.0, 1.0, size=(n_envs, 6)))
        jerk_sq.append(np.sum(snap.jerk**2, axis=-1))
        work.append(snap.work_inc)
        for i in np.flatnonzero((status == Status.EPISODE_DONE) | (env.trials_resolved >= config.clicks_per_episode)):
            env.reset_one(i, rng.integers(2**31))
    return float(np.percentile(np.concatenate(jerk_sq), percentile)), float(np.percentile(np.concatenate(work), percentile))
