"""Muscle-actuated planar two-link arm.

The arm moves in a vertical plane with gravity along -y. Joint angles are
measured counter-clockwise: the shoulder angle from the +x axis, the elbow
angle relative to the upper arm. With ``q = (-pi/2, 0)`` the arm hangs
straight down.

Six muscle-like actuators form three antagonistic pairs (shoulder, elbow,
biarticular). Muscle order is::

    0 shoulder flexor   1 shoulder extensor
    2 elbow flexor      3 elbow extensor
    4 biarticular flex  5 biarticular extensor
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import _kernels

N_JOINTS = 2
N_MUSCLES = 6

# pair structure: which joints each muscle pulls on, and in which direction
_PAIR_SIGNS = np.array(
    [
        [1.0, -1.0, 0.0, 0.0, 1.0, -1.0],
        [0.0, 0.0, 1.0, -1.0, 1.0, -1.0],
    ]
)


@dataclass(frozen=True)
class ArmParams:
    link_lengths: tuple[float, float] = (0.30, 0.35)
    link_masses: tuple[float, float] = (2.0, 1.5)
    damping: float = 0.5
    moment_arm: float = 0.04
    max_force: float = 250.0
    gravity: float = 9.81
    tau_act: float = 0.03
    dt_physics: float = 0.002
    dt_control: float = 0.02
    shoulder_limits: tuple[float, float] = (-0.5 * math.pi, 0.75 * math.pi)
    elbow_limits: tuple[float, float] = (0.0, 0.9 * math.pi)

    def __post_init__(self):
        for name in ("damping", "moment_arm", "max_force", "gravity"):
            if not math.isfinite(getattr(self, name)) or getattr(self, name) < 0:
                raise ValueError(f"ArmParams.{name} must be finite and >= 0")
        for name in ("tau_act", "dt_physics", "dt_control"):
            if not getattr(self, name) > 0:
                raise ValueError(f"ArmParams.{name} must be > 0")
        if min(self.link_lengths) <= 0 or min(self.link_masses) <= 0:
            raise ValueError("link lengths and masses must be positive")
        if self.shoulder_limits[0] >= self.shoulder_limits[1] or self.elbow_limits[0] >= self.elbow_limits[1]:
            raise ValueError("joint limits must be increasing")
        ratio = self.dt_control / self.dt_physics
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("dt_control must be an integer multiple of dt_physics")

    @property
    def n_substeps(self) -> int:
        return int(round(self.dt_control / self.dt_physics))

    @property
    def moment_arm_matrix(self) -> np.ndarray:
        """Signed moment arms in metres, shape (2, 6)."""
        return self.moment_arm * _PAIR_SIGNS

    @property
    def torque_matrix(self) -> np.ndarray:
        """Joint torque per unit activation (N m), shape (2, 6)."""
        return self.moment_arm_matrix * self.max_force

    def packed(self) -> np.ndarray:
        L1, L2 = self.link_lengths
        m1, m2 = self.link_masses
        return np.array(
            [L1, L2, m1, m2, self.gravity, self.damping, self.tau_act, *self.shoulder_limits, *self.elbow_limits],
            dtype=np.float64,
        )

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, data: dict) -> ArmParams:
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown arm parameter(s): {sorted(unknown)}")
        kwargs = {k: tuple(v) if isinstance(v, (list, tuple)) else v for k, v in data.items()}
        return cls(**kwargs)


DEFAULT_PARAMS = ArmParams()


@dataclass
class ArmState:
    q: np.ndarray = field(default_factory=lambda: np.zeros(N_JOINTS))
    qdot: np.ndarray = field(default_factory=lambda: np.zeros(N_JOINTS))
    qacc: np.ndarray = field(default_factory=lambda: np.zeros(N_JOINTS))
    act: np.ndarray = field(default_factory=lambda: np.zeros(N_MUSCLES))
    t: float = 0.0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=np.float64).reshape(N_JOINTS)
        self.qdot = np.asarray(self.qdot, dtype=np.float64).reshape(N_JOINTS)
        self.qacc = np.asarray(self.qacc, dtype=np.float64).reshape(N_JOINTS)
        self.act = np.asarray(self.act, dtype=np.float64).reshape(N_MUSCLES)

    def pack(self) -> np.ndarray:
        return np.concatenate([self.q, self.qdot, self.act])

    def copy(self) -> ArmState:
        return replace(self, q=self.q.copy(), qdot=self.qdot.copy(), qacc=self.qacc.copy(), act=self.act.copy())

    def validate(self, params: ArmParams = DEFAULT_PARAMS) -> None:
        for name in ("q", "qdot", "qacc", "act"):
            if not np.all(np.isfinite(getattr(self, name))):
                raise FloatingPointError(f"non-finite ArmState.{name}: {getattr(self, name)}")
        if np.any(self.act < 0) or np.any(self.act > 1):
            raise ValueError(f"activations outside [0, 1]: {self.act}")
        lo, hi = joint_limits(params)
        if np.any(self.q < lo) or np.any(self.q > hi):
            raise ValueError(f"joint angles outside limits: {self.q}")


def joint_limits(params: ArmParams = DEFAULT_PARAMS) -> tuple[np.ndarray, np.ndarray]:
    lo = np.array([params.shoulder_limits[0], params.elbow_limits[0]])
    hi = np.array([params.shoulder_limits[1], params.elbow_limits[1]])
    return lo, hi


def hanging_state(params: ArmParams = DEFAULT_PARAMS) -> ArmState:
    """Arm hanging straight down at rest, all muscles relaxed."""
    return ArmState(q=np.array([-0.5 * math.pi, 0.0]))


def _check_finite(name: str, x) -> np.ndarray:
    arr = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise FloatingPointError(f"non-finite {name}: {arr}")
    return arr


def activation_step(act, u, dt: float, tau_act: float = DEFAULT_PARAMS.tau_act) -> np.ndarray:
    """One explicit-Euler update of the first-order activation filter.

    ``act + (u - act) * dt / tau_act``, clamped to [0, 1]. :func:`dynamics_step`
    integrates the same filter ODE jointly with the rigid-body state at
    fourth order.
    """
    if not dt > 0:
        raise ValueError("dt must be > 0")
    act = _check_finite("activation", act)
    u = np.clip(_check_finite("command", u), 0.0, 1.0)
    return np.clip(act + (u - act) * (dt / tau_act), 0.0, 1.0)


def muscle_torque(act, params: ArmParams = DEFAULT_PARAMS) -> np.ndarray:
    """Joint torques (N m) produced by the activations; works on (..., 6) arrays."""
    act = _check_finite("activation", act)
    return act @ params.torque_matrix.T


def fingertip_position(state_or_q, params: ArmParams = DEFAULT_PARAMS) -> np.ndarray:
    """Forward kinematics; accepts an ArmState or joint angles of shape (..., 2)."""
    q = state_or_q.q if isinstance(state_or_q, ArmState) else np.asarray(state_or_q, dtype=np.float64)
    L1, L2 = params.link_lengths
    q1 = q[..., 0]
    q12 = q1 + q[..., 1]
    return np.stack([L1 * np.cos(q1) + L2 * np.cos(q12), L1 * np.sin(q1) + L2 * np.sin(q12)], axis=-1)


def joint_work_increment(state: ArmState, tau, dt: float) -> float:
    """Unsigned mechanical work of both joints over ``dt``: sum |tau_i qdot_i| dt."""
    tau = np.asarray(tau, dtype=np.float64)
    return float(np.sum(np.abs(tau * state.qdot)) * dt)


def mass_matrix(q, params: ArmParams = DEFAULT_PARAMS) -> np.ndarray:
    M11, M12, M22 = _kernels._mass_matrix(float(q[1]), params.packed())
    return np.array([[M11, M12], [M12, M22]])


def mechanical_energy(state: ArmState, params: ArmParams = DEFAULT_PARAMS) -> float:
    """Kinetic plus gravitational potential energy (J), datum at the shoulder."""
    M = mass_matrix(state.q, params)
    ke = 0.5 * state.qdot @ M @ state.qdot
    L1, L2 = params.link_lengths
    m1, m2 = params.link_masses
    q1, q12 = state.q[0], state.q[0] + state.q[1]
    pe = params.gravity * (m1 * 0.5 * L1 * math.sin(q1) + m2 * (L1 * math.sin(q1) + 0.5 * L2 * math.sin(q12)))
    return float(ke + pe)


def dynamics_step_with_work(
    state: ArmState, u, dt: float | None = None, params: ArmParams = DEFAULT_PARAMS
) -> tuple[ArmState, float]:
    """Advance one physics step; also return the signed actuator work (J).

    The state ``(q, qdot, act)`` is integrated with classical RK4 under a
    constant command. Joint limits act as hard stops: impacts are located
    within the step, the joint is clamped and the velocity into the limit is
    removed by an inelastic impulse. ``qacc`` of the result is the effective
    acceleration ``(qdot' - qdot) / dt``.
    """
    dt = params.dt_physics if dt is None else dt
    if not dt > 0:
        raise ValueError("dt must be > 0")
    u = np.clip(_check_finite("command", u).reshape(N_MUSCLES), 0.0, 1.0)
    y = state.pack()
    if not np.all(np.isfinite(y)):
        state.validate(params)
    out = np.empty_like(y)
    work = _kernels.substep(y, u, dt, params.packed(), params.torque_matrix, out)
    new = ArmState(q=out[0:2], qdot=out[2:4], qacc=(out[2:4] - y[2:4]) / dt, act=out[4:], t=state.t + dt)
    for name in ("q", "qdot", "act"):
        if not np.all(np.isfinite(getattr(new, name))):
            raise FloatingPointError(f"dynamics produced non-finite {name}: {getattr(new, name)}")
    return new, float(work)


def dynamics_step(state: ArmState, u, dt: float | None = None, params: ArmParams = DEFAULT_PARAMS) -> ArmState:
    return dynamics_step_with_work(state, u, dt, params)[0]


def simulate(state: ArmState, commands, dt: float, hold: int, params: ArmParams = DEFAULT_PARAMS) -> ArmState:
    """Apply each command for ``hold`` steps of ``dt``; returns the final state."""
    for u in commands:
        for _ in range(hold):
            state = dynamics_step(state, u, dt, params)
    return state
