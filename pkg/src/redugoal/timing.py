"""Execution-time model: rest-to-rest trapezoidal profiles per path segment."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np


@dataclass(frozen=True)
class JointDynamics:
    """Per-joint velocity (rad/s) and acceleration (rad/s^2) limits."""

    v_max: np.ndarray
    a_max: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "v_max", np.asarray(self.v_max, dtype=float))
        object.__setattr__(self, "a_max", np.asarray(self.a_max, dtype=float))
        if self.v_max.shape != self.a_max.shape:
            raise ValueError("v_max and a_max need matching shapes")
        if np.any(self.v_max <= 0) or np.any(self.a_max <= 0):
            raise ValueError("dynamics limits must be positive")

    def to_dict(self) -> dict:
        return {"v_max": self.v_max.tolist(), "a_max": self.a_max.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "JointDynamics":
        return cls(v_max=data["v_max"], a_max=data["a_max"])

    @classmethod
    def load(cls, path: str) -> "JointDynamics":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def default_ur5_dynamics() -> JointDynamics:
    """Conservative UR5-class limits shipped as package data."""
    ref = resources.files("redugoal.presets").joinpath("ur5_dynamics.json")
    return JointDynamics.from_dict(json.loads(ref.read_text(encoding="utf-8")))


def segment_time(delta: np.ndarray, dyn: JointDynamics) -> float:
    """Rest-to-rest time for one segment, synchronized as max over joints.

    A joint moving |d| under limits (v, a) needs |d|/v + v/a when it reaches
    cruise speed (|d| a >= v^2), else the triangular 2*sqrt(|d|/a).
    """
    delta = np.abs(np.asarray(delta, dtype=float))
    if delta.shape != dyn.v_max.shape:
        raise ValueError("delta length must match dynamics dimensions")
    v, a = dyn.v_max, dyn.a_max
    trapezoid = delta / v + v / a
    triangle = 2.0 * np.sqrt(delta / a)
    times = np.where(delta * a >= v * v, trapezoid, triangle)
    times = np.where(delta == 0.0, 0.0, times)
    return float(np.max(times)) if times.size else 0.0


def execution_time(path: np.ndarray, dyn: JointDynamics) -> float:
    """Total traversal time of a waypoint path with a full stop at each waypoint."""
    path = np.asarray(path, dtype=float)
    if path.ndim != 2:
        raise ValueError("path must be a (m, N) waypoint array")
    if path.shape[1] != dyn.v_max.shape[0]:
        raise ValueError("waypoint dimension must match dynamics dimensions")
    total = 0.0
    for i in range(len(path) - 1):
        total += segment_time(path[i + 1] - path[i], dyn)
    return total


def _max_distance_in(T: float, v: float, a: float) -> float:
    # Largest distance coverable rest-to-rest in time T: accelerate, possibly
    # cruise, decelerate. Used only by the test oracle via bisection.
    if T <= 0:
        return 0.0
    if T >= 2.0 * v / a:
        return v * (T - v / a)
    return a * T * T / 4.0


def segment_time_oracle(delta: np.ndarray, dyn: JointDynamics, tol: float = 1e-12) -> float:
    """Independent check: invert the max-distance-in-time relation by bisection."""
    delta = np.abs(np.asarray(delta, dtype=float))
    worst = 0.0
    for d, v, a in zip(delta, dyn.v_max, dyn.a_max):
        if d == 0.0:
            continue
        lo, hi = 0.0, d / v + 2.0 * v / a + 1.0
        while hi - lo > tol:
            mid = 0.5 * (lo + hi)
            if _max_distance_in(mid, v, a) >= d:
                hi = mid
            else:
                lo = mid
        worst = max(worst, hi)
    return worst
