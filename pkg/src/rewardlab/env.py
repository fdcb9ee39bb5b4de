"""Choice-reaction task: four coloured buttons, a colour stimulus, press detection.

:class:`ChoiceReactionBatch` runs ``n`` independent environments in lockstep on
numpy arrays (the trainer uses it); :class:`ChoiceReactionEnv` is the
single-environment view with unbatched observations and snapshots.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, fields

import numpy as np

from . import _kernels
from .arm import DEFAULT_PARAMS, N_MUSCLES, ArmParams, fingertip_position, hanging_state

N_BUTTONS = 4
COLOUR_NAMES = ("green", "blue", "red", "yellow")


class Status(enum.IntEnum):
    RUNNING = 0
    TRIAL_SUCCESS = 1
    TRIAL_TIMEOUT = 2
    EPISODE_DONE = 3


@dataclass(frozen=True)
class ButtonLayout:
    positions: tuple[tuple[float, float], ...]
    radius: float = 0.025
    colours: tuple[int, ...] = (0, 1, 2, 3)

    @classmethod
    def grid(cls, center=(0.38, 0.10), spacing: float = 0.14, radius: float = 0.025) -> ButtonLayout:
        """2x2 grid; buttons ordered lower-left, lower-right, upper-left, upper-right."""
        cx, cy = center
        h = 0.5 * spacing
        pos = ((cx - h, cy - h), (cx + h, cy - h), (cx - h, cy + h), (cx + h, cy + h))
        return cls(positions=pos, radius=radius)

    @property
    def centers(self) -> np.ndarray:
        return np.asarray(self.positions, dtype=np.float64)

    def validate(self, params: ArmParams = DEFAULT_PARAMS) -> None:
        c = self.centers
        if c.shape != (N_BUTTONS, 2):
            raise ValueError(f"layout needs {N_BUTTONS} button centres, got shape {c.shape}")
        if sorted(self.colours) != list(range(N_BUTTONS)):
            raise ValueError(f"colours must be a permutation of 0..{N_BUTTONS - 1}")
        if not self.radius > 0:
            raise ValueError("button radius must be > 0")
        L1, L2 = params.link_lengths
        r = np.linalg.norm(c, axis=1)
        if np.any(r <= abs(L1 - L2)) or np.any(r >= L1 + L2):
            raise ValueError("every button must lie inside the reachable annulus")
        for i in range(N_BUTTONS):
            for j in range(i + 1, N_BUTTONS):
                if np.linalg.norm(c[i] - c[j]) <= 2 * self.radius:
                    raise ValueError(f"buttons {i} and {j} overlap")

    def center_of(self, colour) -> np.ndarray:
        """Button centre(s) for colour index (scalar or array)."""
        order = np.argsort(np.asarray(self.colours))
        return self.centers[order[np.asarray(colour)]]

    def to_dict(self) -> dict:
        return {"positions": [list(p) for p in self.positions], "radius": self.radius, "colours": list(self.colours)}

    @classmethod
    def from_dict(cls, data: dict) -> ButtonLayout:
        unknown = set(data) - {"positions", "radius", "colours", "center", "spacing"}
        if unknown:
            raise ValueError(f"unknown layout key(s): {sorted(unknown)}")
        if "positions" in data:
            return cls(
                positions=tuple(tuple(float(v) for v in p) for p in data["positions"]),
                radius=float(data.get("radius", 0.025)),
                colours=tuple(data.get("colours", (0, 1, 2, 3))),
            )
        return cls.grid(
            center=tuple(data.get("center", (0.38, 0.10))),
            spacing=float(data.get("spacing", 0.14)),
            radius=float(data.get("radius", 0.025)),
        )


@dataclass(frozen=True)
class EnvConfig:
    layout: ButtonLayout = field(default_factory=ButtonLayout.grid)
    press_speed: float = 0.05
    trial_timeout: float = 4.0
    clicks_per_episode: int = 10
    arm: ArmParams = DEFAULT_PARAMS

    def __post_init__(self):
        self.layout.validate(self.arm)
        if not self.press_speed >= 0:
            raise ValueError("press_speed must be >= 0")
        if self.clicks_per_episode < 1:
            raise ValueError("clicks_per_episode must be >= 1")
        steps = self.trial_timeout / self.arm.dt_control
        if abs(steps - round(steps)) > 1e-9 or steps < 1:
            raise ValueError("trial_timeout must be a positive multiple of the control step")

    @property
    def timeout_steps(self) -> int:
        return int(round(self.trial_timeout / self.arm.dt_control))

    def to_dict(self) -> dict:
        return {
            "layout": self.layout.to_dict(),
            "press_speed": self.press_speed,
            "trial_timeout": self.trial_timeout,
            "clicks_per_episode": self.clicks_per_episode,
            "arm": self.arm.to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict | None) -> EnvConfig:
        data = dict(data or {})
        unknown = set(data) - {f.name for f in fields(cls)}
        if unknown:
            raise ValueError(f"unknown env key(s): {sorted(unknown)}")
        if "layout" in data:
            data["layout"] = ButtonLayout.from_dict(data["layout"])
        if "arm" in data:
            data["arm"] = ArmParams.from_dict(data["arm"])
        return cls(**data)


@dataclass
class Observation:
    q: np.ndarray
    qdot: np.ndarray
    act: np.ndarray
    fingertip: np.ndarray
    stimulus: np.ndarray
    trial_clock_norm: np.ndarray

    @property
    def proprioception(self) -> np.ndarray:
        return np.concatenate([self.q, self.qdot, self.act], axis=-1)

    def vector(self) -> np.ndarray:
        clock = np.asarray(self.trial_clock_norm)[..., None]
        return np.concatenate([self.q, self.qdot, self.act, self.fingertip, self.stimulus, clock], axis=-1)

    def __getitem__(self, i) -> Observation:
        return Observation(**{f.name: getattr(self, f.name)[i] for f in fields(self)})


OBS_DIM = 2 + 2 + N_MUSCLES + 2 + N_BUTTONS + 1


def observation_scaling(params: ArmParams = DEFAULT_PARAMS) -> tuple[np.ndarray, np.ndarray]:
    """Fixed (centre, half-range) of every observation entry from physical ranges.

    Joint velocities use +-10 rad/s and the fingertip +-(L1 + L2).
    """
    (s_lo, s_hi), (e_lo, e_hi) = params.shoulder_limits, params.elbow_limits
    reach = sum(params.link_lengths)
    center = np.concatenate(
        [[(s_lo + s_hi) / 2, (e_lo + e_hi) / 2], [0.0, 0.0], np.full(N_MUSCLES, 0.5), [0.0, 0.0], np.full(N_BUTTONS, 0.5), [0.5]]
    )
    half = np.concatenate(
        [[(s_hi - s_lo) / 2, (e_hi - e_lo) / 2], [10.0, 10.0], np.full(N_MUSCLES, 0.5), [reach, reach], np.full(N_BUTTONS, 0.5), [0.5]]
    )
    return center, half


@dataclass
class StepSnapshot:
    """Everything the reward engine reads for one control step.

    Fields may carry a leading batch axis. ``target`` and ``trial_time`` refer
    to the trial that was active during the step (before any resampling).
    """

    u: np.ndarray
    tau: np.ndarray
    tau_dot: np.ndarray
    qacc: np.ndarray
    jerk: np.ndarray
    work_inc: np.ndarray | float
    dist: np.ndarray | float
    pressed_correct: np.ndarray | bool
    pressed_wrong: np.ndarray | bool
    target: np.ndarray | int = 0
    trial_time: np.ndarray | float = 0.0

    def __getitem__(self, i) -> StepSnapshot:
        return StepSnapshot(**{f.name: _item(getattr(self, f.name), i) for f in fields(self)})


def _item(value, i):
    v = np.asarray(value)[i]
    if v.ndim == 0:
        return v.item()
    return v


def distance_to_target(fingertip, layout: ButtonLayout, target) -> np.ndarray | float:
    """Distance from the fingertip to the target button disc (0 on or inside it)."""
    c = layout.center_of(target)
    d = np.maximum(0.0, np.linalg.norm(np.asarray(fingertip, dtype=np.float64) - c, axis=-1) - layout.radius)
    return float(d) if np.ndim(d) == 0 else d


def detect_press(prev_fingertip, fingertip, layout: ButtonLayout, button, dt_control: float, press_speed: float = 0.05):
    """Fingertip inside the button disc while closing on its centre faster than ``press_speed``."""
    c = layout.center_of(button)
    r_prev = np.linalg.norm(np.asarray(prev_fingertip, dtype=np.float64) - c, axis=-1)
    r_now = np.linalg.norm(np.asarray(fingertip, dtype=np.float64) - c, axis=-1)
    hit = (r_now <= layout.radius) & ((r_prev - r_now) / dt_control > press_speed)
    return bool(hit) if np.ndim(hit) == 0 else hit


class UsageError(RuntimeError):
    pass


class ChoiceReactionBatch:
    """``n`` choice-reaction environments stepped together.

    Each environment owns its own random generator (seeded at reset) for
    target sampling, so streams do not depend on batch composition.
    """

    def __init__(self, n: int, config: EnvConfig | None = None):
        self.n = n
        self.config = config or EnvConfig()
        p = self.config.arm
        self._p = p.packed()
        self._A = p.torque_matrix
        self._centers = self.config.layout.center_of(np.arange(N_BUTTONS))
        self.y = np.tile(hanging_state(p).pack(), (n, 1))
        self.qacc = np.zeros((n, 2))
        self.tau = np.zeros((n, 2))
        self.t = np.zeros(n)
        self.tip = fingertip_position(self.y[:, :2], p)
        self.target = np.zeros(n, dtype=np.int64)
        self.trial_steps = np.zeros(n, dtype=np.int64)
        self.presses_done = np.zeros(n, dtype=np.int64)
        self.trials_resolved = np.zeros(n, dtype=np.int64)
        self.done = np.zeros(n, dtype=bool)
        self.rngs: list[np.random.Generator] = [np.random.default_rng(0) for _ in range(n)]
        self._ready = np.zeros(n, dtype=bool)

    def reset_one(self, i: int, seed) -> None:
        p = self.config.arm
        self.y[i] = hanging_state(p).pack()
        self.qacc[i] = 0.0
        self.tau[i] = 0.0
        self.t[i] = 0.0
        self.tip[i] = fingertip_position(self.y[i, :2], p)
        self.rngs[i] = np.random.default_rng(seed)
        self.target[i] = self.rngs[i].integers(N_BUTTONS)
        self.trial_steps[i] = 0
        self.presses_done[i] = 0
        self.trials_resolved[i] = 0
        self.done[i] = False
        self._ready[i] = True

    def reset(self, seeds) -> Observation:
        for i, s in enumerate(seeds):
            self.reset_one(i, s)
        return self.observation()

    def observation(self) -> Observation:
        onehot = np.zeros((self.n, N_BUTTONS))
        onehot[np.arange(self.n), self.target] = 1.0
        return Observation(
            q=self.y[:, 0:2].copy(),
            qdot=self.y[:, 2:4].copy(),
            act=self.y[:, 4:].copy(),
            fingertip=self.tip.copy(),
            stimulus=onehot,
            trial_clock_norm=self.trial_steps * self.config.arm.dt_control / self.config.trial_timeout,
        )

    def step(self, U) -> tuple[Observation, StepSnapshot, np.ndarray]:
        if not np.all(self._ready):
            raise UsageError("reset() must be called before step()")
        if np.any(self.done):
            raise UsageError(f"environment(s) {np.flatnonzero(self.done).tolist()} already finished; reset first")
        cfg = self.config
        p = cfg.arm
        dt_c = p.dt_control
        U = np.asarray(U, dtype=np.float64).reshape(self.n, N_MUSCLES)
        if not np.all(np.isfinite(U)):
            raise FloatingPointError("non-finite muscle command")
        U = np.clip(U, 0.0, 1.0)

        y_new = np.empty_like(self.y)
        qacc = np.empty((self.n, 2))
        work_signed = np.empty(self.n)
        work_abs = np.empty(self.n)
        _kernels.control_step_batch(self.y, U, p.n_substeps, p.dt_physics, self._p, self._A, y_new, qacc, work_signed, work_abs)
        if not np.all(np.isfinite(y_new)):
            bad = np.flatnonzero(~np.all(np.isfinite(y_new), axis=1))
            raise FloatingPointError(f"non-finite arm state in environment(s) {bad.tolist()}")

        tau = y_new[:, 4:] @ self._A.T
        tau_dot = (tau - self.tau) / dt_c
        jerk = (qacc - self.qacc) / dt_c
        tip = fingertip_position(y_new[:, :2], p)

        # press detection against every button
        r_prev = np.linalg.norm(self.tip[:, None, :] - self._centers[None], axis=-1)
        r_now = np.linalg.norm(tip[:, None, :] - self._centers[None], axis=-1)
        pressed = (r_now <= cfg.layout.radius) & ((r_prev - r_now) / dt_c > cfg.press_speed)
        rows = np.arange(self.n)
        target = self.target.copy()
        pressed_correct = pressed[rows, target]
        pressed_wrong = pressed.any(axis=1) & ~pressed_correct
        dist = np.maximum(0.0, r_now[rows, target] - cfg.layout.radius)

        self.y = y_new
        self.qacc = qacc
        self.tau = tau
        self.tip = tip
        self.t += dt_c
        self.trial_steps += 1
        trial_time = self.trial_steps * dt_c

        status = np.full(self.n, Status.RUNNING, dtype=np.int64)
        for i in np.flatnonzero(pressed_correct):
            self.presses_done[i] += 1
            self.trials_resolved[i] += 1
            self.trial_steps[i] = 0
            if self.presses_done[i] >= cfg.clicks_per_episode:
                status[i] = Status.EPISODE_DONE
                self.done[i] = True
            else:
                status[i] = Status.TRIAL_SUCCESS
                others = [c for c in range(N_BUTTONS) if c != self.target[i]]
                self.target[i] = others[self.rngs[i].integers(N_BUTTONS - 1)]
        timed_out = ~pressed_correct & (self.trial_steps >= cfg.timeout_steps)
        status[timed_out] = Status.TRIAL_TIMEOUT
        self.trials_resolved[timed_out] += 1
        self.trial_steps[timed_out] = 0

        snap = StepSnapshot(
            u=U,
            tau=tau,
            tau_dot=tau_dot,
            qacc=qacc.copy(),
            jerk=jerk,
            work_inc=work_abs,
            dist=dist,
            pressed_correct=pressed_correct,
            pressed_wrong=pressed_wrong,
            target=target,
            trial_time=trial_time,
        )
        return self.observation(), snap, status

    def get_state(self) -> dict:
        return {
            "y": self.y.copy(),
            "qacc": self.qacc.copy(),
            "tau": self.tau.copy(),
            "t": self.t.copy(),
            "tip": self.tip.copy(),
            "target": self.target.copy(),
            "trial_steps": self.trial_steps.copy(),
            "presses_done": self.presses_done.copy(),
            "trials_resolved": self.trials_resolved.copy(),
            "done": self.done.copy(),
            "ready": self._ready.copy(),
            "rngs": [r.bit_generator.state for r in self.rngs],
        }

    def set_state(self, state: dict) -> None:
        for key in ("y", "qacc", "tau", "t", "tip", "target", "trial_steps", "presses_done", "trials_resolved", "done"):
            setattr(self, key, np.array(state[key]))
        self._ready = np.array(state["ready"])
        self.rngs = []
        for s in state["rngs"]:
            g = np.random.default_rng()
            g.bit_generator.state = s
            self.rngs.append(g)


class ChoiceReactionEnv:
    """Single choice-reaction environment."""

    def __init__(self, config: EnvConfig | None = None):
        self._batch = ChoiceReactionBatch(1, config)

    @property
    def config(self) -> EnvConfig:
        return self._batch.config

    @property
    def target(self) -> int:
        return int(self._batch.target[0])

    @property
    def presses_done(self) -> int:
        return int(self._batch.presses_done[0])

    @property
    def trials_resolved(self) -> int:
        return int(self._batch.trials_resolved[0])

    @property
    def trial_clock(self) -> float:
        return float(self._batch.trial_steps[0] * self.config.arm.dt_control)

    @property
    def arm_state(self):
        from .arm import ArmState

        y = self._batch.y[0]
        return ArmState(q=y[0:2], qdot=y[2:4], qacc=self._batch.qacc[0], act=y[4:], t=float(self._batch.t[0]))

    @property
    def fingertip(self) -> np.ndarray:
        return self._batch.tip[0].copy()

    def set_arm_state(self, q, qdot=(0.0, 0.0), act=None) -> None:
        """Place the arm (testing and scripted scenarios); derived quantities follow."""
        b = self._batch
        b.y[0, 0:2] = q
        b.y[0, 2:4] = qdot
        if act is not None:
            b.y[0, 4:] = act
        b.tau[0] = b.y[0, 4:] @ b._A.T
        b.tip[0] = fingertip_position(b.y[0, :2], self.config.arm)

    def reset(self, seed) -> Observation:
        return self._batch.reset([seed])[0]

    def step(self, u) -> tuple[Observation, StepSnapshot, Status]:
        obs, snap, status = self._batch.step(np.asarray(u, dtype=np.float64)[None])
        return obs[0], snap[0], Status(int(status[0]))

