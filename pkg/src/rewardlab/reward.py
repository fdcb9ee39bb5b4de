"""Composite reward: completion bonus, distance shaping and effort costs.

    r_t = w_bonus * f_bonus - w_distance * f_distance - w_effort * f_effort

All component functions broadcast over a leading batch axis, so the trainer
evaluates whole batches of snapshots with the same code used for single
steps.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DISTANCE_MODELS = ("absolute", "squared", "exponential", "none")
EFFORT_MODELS = ("zero", "DC", "CTC", "JAC", "EJK")

# number of coefficients each effort model reads
_N_COEFFS = {"zero": 0, "DC": 1, "CTC": 2, "JAC": 2, "EJK": 3}


class RewardSpecError(ValueError):
    pass


@dataclass(frozen=True)
class RewardSpec:
    w_bonus: float = 1.0
    w_distance: float = 1.0
    w_effort: float = 0.0
    bonus_b: float = 0.0
    distance_model: str = "exponential"
    effort_model: str = "zero"
    effort_coeffs: tuple[float, float, float] = (0.0, 0.0, 0.0)
    id: str | None = None

    def __post_init__(self):
        coeffs = tuple(float(c) for c in self.effort_coeffs) + (0.0,) * (3 - len(self.effort_coeffs))
        if len(coeffs) != 3:
            raise RewardSpecError(f"effort_coeffs: at most 3 values, got {self.effort_coeffs!r}")
        object.__setattr__(self, "effort_coeffs", coeffs)
        for name in ("w_bonus", "w_distance", "w_effort", "bonus_b"):
            v = getattr(self, name)
            if not isinstance(v, (int, float)) or not math.isfinite(v) or v < 0:
                raise RewardSpecError(f"{name}: must be finite and >= 0, got {v!r}")
        for i, c in enumerate(coeffs):
            if not math.isfinite(c) or c < 0:
                raise RewardSpecError(f"effort_coeffs[{i}]: must be finite and >= 0, got {c!r}")
        if self.distance_model not in DISTANCE_MODELS:
            raise RewardSpecError(f"distance_model: {self.distance_model!r} not in {DISTANCE_MODELS}")
        if self.effort_model not in EFFORT_MODELS:
            raise RewardSpecError(f"effort_model: {self.effort_model!r} not in {EFFORT_MODELS}")
        if self.effort_model == "EJK" and sum(coeffs) <= 0:
            raise RewardSpecError("effort_coeffs: EJK needs c1 + c2 + c3 > 0")

    def to_dict(self) -> dict:
        n = _N_COEFFS[self.effort_model]
        d = {
            "w_bonus": self.w_bonus,
            "w_distance": self.w_distance,
            "w_effort": self.w_effort,
            "bonus_b": self.bonus_b,
            "distance_model": self.distance_model,
            "effort_model": self.effort_model,
            "effort_coeffs": list(self.effort_coeffs[:n]),
        }
        if self.id is not None:
            d["id"] = self.id
        return d

    @classmethod
    def from_dict(cls, data: dict) -> RewardSpec:
        allowed = set(cls.__dataclass_fields__)
        unknown = set(data) - allowed
        if unknown:
            raise RewardSpecError(f"unknown reward key(s): {sorted(unknown)}")
        kwargs = dict(data)
        if "effort_coeffs" in kwargs:
            kwargs["effort_coeffs"] = tuple(kwargs["effort_coeffs"] or ())
        if kwargs.get("id") is not None:
            kwargs["id"] = str(kwargs["id"])
        return cls(**kwargs)


# frozen output of rewardlab.calibration.calibrate() on the default arm
DEFAULT_SCALE_JERK = 8032298268.4151535
DEFAULT_SCALE_WORK = 0.8754265518812391


@dataclass(frozen=True)
class EffortNormalizer:
    """Fixed scales that map the EJK raw terms roughly onto [0, 1].

    ``scale_jerk`` and ``scale_work`` are the 99th percentiles of the squared
    joint jerk and of the per-step unsigned work under uniform random
    commands on the default arm (reproduced by
    :func:`rewardlab.calibration.calibrate`).
    """

    scale_energy: float = 1.0
    scale_jerk: float = DEFAULT_SCALE_JERK
    scale_work: float = DEFAULT_SCALE_WORK

    def __post_init__(self):
        for name in ("scale_energy", "scale_jerk", "scale_work"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0):
                raise ValueError(f"EffortNormalizer.{name} must be > 0, got {v!r}")


@dataclass
class RewardBreakdown:
    """Raw component values and the weighted total (scalars or batch arrays)."""

    bonus_term: np.ndarray | float
    distance_term: np.ndarray | float
    effort_term: np.ndarray | float
    total: np.ndarray | float


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def _sqnorm(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.sum(x * x, axis=-1)


def bonus(pressed_correct, b: float):
    return _out(np.where(np.asarray(pressed_correct, dtype=bool), float(b), 0.0))


def distance_reward(dist, model: str):
    d = np.asarray(dist, dtype=np.float64)
    if np.any(d < 0) or not np.all(np.isfinite(d)):
        raise ValueError(f"distance must be finite and >= 0, got {dist!r}")
    if model == "absolute":
        return _out(np.abs(d))
    if model == "squared":
        return _out(d * d)
    if model == "exponential":
        return _out(-np.expm1(-10.0 * d) / 10.0)
    if model == "none":
        return _out(np.zeros_like(d))
    raise ValueError(f"unknown distance model {model!r}")


def effort_dc(u, c1: float):
    return _out(c1 * _sqnorm(u))


def effort_ctc(u, tau_dot, c1: float, c2: float):
    return _out(c1 * _sqnorm(u) + c2 * _sqnorm(tau_dot))


def effort_jac(u, qacc, c1: float, c2: float):
    return _out(c1 * _sqnorm(u) + c2 * _sqnorm(qacc))


def ejk_components(snapshot, norm: EffortNormalizer | None = None):
    """Normalized (r_energy, r_jerk, r_work), each clamped to [0, 1]."""
    norm = norm or EffortNormalizer()
    u = np.asarray(snapshot.u, dtype=np.float64)
    r_energy = np.clip(np.mean(u, axis=-1) / norm.scale_energy, 0.0, 1.0)
    r_jerk = np.clip(_sqnorm(snapshot.jerk) / norm.scale_jerk, 0.0, 1.0)
    r_work = np.clip(np.asarray(snapshot.work_inc, dtype=np.float64) / norm.scale_work, 0.0, 1.0)
    return _out(r_energy), _out(r_jerk), _out(r_work)


def effort_ejk(r_energy, r_jerk, r_work, c1: float, c2: float, c3: float):
    s = c1 + c2 + c3
    if not s > 0:
        raise ValueError("EJK coefficients must have a positive sum")
    return _out((c1 * np.asarray(r_energy) + c2 * np.asarray(r_jerk) + c3 * np.asarray(r_work)) / s)


def effort_reward(spec: RewardSpec, snapshot, norm: EffortNormalizer | None = None):
    c1, c2, c3 = spec.effort_coeffs
    model = spec.effort_model
    if model == "zero":
        return _out(np.zeros(np.shape(snapshot.dist)))
    if model == "DC":
        return effort_dc(snapshot.u, c1)
    if model == "CTC":
        return effort_ctc(snapshot.u, snapshot.tau_dot, c1, c2)
    if model == "JAC":
        return effort_jac(snapshot.u, snapshot.qacc, c1, c2)
    return effort_ejk(*ejk_components(snapshot, norm), c1, c2, c3)


def composite(spec: RewardSpec, snapshot, norm: EffortNormalizer | None = None) -> RewardBreakdown:
    b = bonus(snapshot.pressed_correct, spec.bonus_b)
    d = distance_reward(snapshot.dist, spec.distance_model)
    e = effort_reward(spec, snapshot, norm)
    total = spec.w_bonus * np.asarray(b) - spec.w_distance * np.asarray(d) - spec.w_effort * np.asarray(e)
    return RewardBreakdown(bonus_term=b, distance_term=d, effort_term=e, total=_out(total))
