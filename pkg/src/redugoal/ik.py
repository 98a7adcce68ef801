"""Closed-form inverse kinematics for UR-class 6R arms and goal-set construction.

A task goal in the workspace expands into many joint-space goals twice over:
once through the up-to-eight closed-form arm poses reaching the pose, and
once more through the whole-revolution equivalents of each of those.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .kinematics import (
    KinematicChain,
    Pose,
    UnsupportedChainError,
    config_distance,
    dh_transform,
    equivalent_configurations,
    forward_kinematics,
    link_frames,
    pose_error,
    wrap_into_limits,
)

_HALF_PI = math.pi / 2.0
IK_POSITION_TOL = 1e-6
IK_ROTATION_TOL = 1e-6
_POSE_MATCH_TOL = 1e-9
_ROLL_GRID = 32

ORIENTATION_MODES = ("fixed", "free-about-tool-axis")


@dataclass(frozen=True)
class TaskGoal:
    """Workspace goal: a tool pose, optionally free to spin about the tool axis."""

    target: Pose
    orientation_mode: str = "fixed"
    max_distinct_poses: int = 8

    def __post_init__(self) -> None:
        if self.orientation_mode not in ORIENTATION_MODES:
            raise ValueError(f"unknown orientation mode {self.orientation_mode!r}")
        if self.max_distinct_poses < 1:
            raise ValueError("max_distinct_poses must be at least 1")

    def to_dict(self) -> dict:
        return {
            "target": self.target.to_dict(),
            "orientation_mode": self.orientation_mode,
            "max_distinct_poses": self.max_distinct_poses,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TaskGoal":
        return cls(
            target=Pose.from_dict(data["target"]),
            orientation_mode=data.get("orientation_mode", "fixed"),
            max_distinct_poses=data.get("max_distinct_poses", 8),
        )


@dataclass(frozen=True)
class GoalSet:
    """Goal configurations ranked by joint-space distance from the start.

    Row i of configs holds the configuration of rank i + 1 (rank 1 is the
    closest to start; ties keep insertion order). pose_index maps each row to
    the task pose in task_poses it reaches.
    """

    configs: np.ndarray
    start: np.ndarray
    distances: np.ndarray
    task_poses: tuple[Pose, ...] = ()
    pose_index: np.ndarray | None = None

    def __post_init__(self) -> None:
        configs = np.asarray(self.configs, dtype=float)
        if configs.size == 0:
            configs = configs.reshape(0, len(np.asarray(self.start)))
        object.__setattr__(self, "configs", configs)
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float))
        object.__setattr__(self, "distances", np.asarray(self.distances, dtype=float))
        if self.pose_index is None:
            object.__setattr__(self, "pose_index", np.zeros(len(configs), dtype=int))
        else:
            object.__setattr__(self, "pose_index", np.asarray(self.pose_index, dtype=int))
        if len(self.distances) != len(configs) or len(self.pose_index) != len(configs):
            raise ValueError("configs, distances and pose_index lengths must agree")
        if np.any(np.diff(self.distances) < 0):
            raise ValueError("distances must be non-decreasing (rank order)")

    def __len__(self) -> int:
        return len(self.configs)

    def rank_of(self, q: np.ndarray, tol: float = 1e-9) -> int:
        """1-based rank of a member configuration; raises when q is not a member."""
        q = np.asarray(q, dtype=float)
        for i, row in enumerate(self.configs):
            if np.max(np.abs(row - q)) <= tol:
                return i + 1
        raise KeyError("configuration is not a member of this goal set")

    def rerank(self, start: np.ndarray) -> "GoalSet":
        """Same goals, ranked against a different start configuration."""
        start = np.asarray(start, dtype=float)
        if len(self.configs) == 0:
            return GoalSet(
                configs=self.configs,
                start=start,
                distances=self.distances,
                task_poses=self.task_poses,
                pose_index=self.pose_index,
            )
        dists = np.linalg.norm(self.configs - start, axis=1)
        order = np.argsort(dists, kind="stable")
        return GoalSet(
            configs=self.configs[order],
            start=start,
            distances=dists[order],
            task_poses=self.task_poses,
            pose_index=self.pose_index[order],
        )


def _ur_parameters(chain: KinematicChain) -> tuple[float, ...]:
    """Extract (d1, a2, a3, d4, d5, d6) or reject the chain."""
    if chain.n_joints != 6:
        raise UnsupportedChainError("closed-form solver needs a 6R chain")
    a = np.array([j.a for j in chain.joints])
    d = np.array([j.d for j in chain.joints])
    alpha = np.array([j.alpha for j in chain.joints])
    expected_alpha = np.array([_HALF_PI, 0.0, 0.0, _HALF_PI, -_HALF_PI, 0.0])
    ok = (
        np.allclose(a[[0, 3, 4, 5]], 0.0, atol=1e-9)
        and np.allclose(d[[1, 2]], 0.0, atol=1e-9)
        and np.allclose(alpha, expected_alpha, atol=1e-9)
        and abs(a[1]) > 1e-9
        and abs(a[2]) > 1e-9
        and abs(d[5]) > 1e-9
    )
    if not ok:
        raise UnsupportedChainError("chain is not a UR-class 6R geometry")
    return d[0], a[1], a[2], d[3], d[4], d[5]


def _wrap_pi(angle: float) -> float:
    return (angle + math.pi) % (2.0 * math.pi) - math.pi


def analytic_ik_6r(chain: KinematicChain, target: Pose) -> list[np.ndarray]:
    """All closed-form in-limit solutions reaching target, FK-verified.

    Up to eight branches (shoulder x2, elbow x2, wrist x2). Solutions that
    cannot be wrapped into the joint limits, or whose forward kinematics
    misses the target beyond 1e-6 m / 1e-6 rad, are dropped. An unreachable
    target yields an empty list.
    """
    d1, a2, a3, d4, d5, d6 = _ur_parameters(chain)
    offsets = np.array([j.theta_offset for j in chain.joints])

    T06 = (
        np.linalg.inv(chain.base_frame)
        @ target.matrix()
        @ np.linalg.inv(chain.tool_frame)
    )
    R = T06[:3, :3]
    p = T06[:3, 3]

    solutions: list[np.ndarray] = []
    seen: set[tuple] = set()

    # shoulder: lateral offset d4 fixes theta1 up to a reflection
    p05 = p - d6 * R[:, 2]
    L = math.hypot(p05[0], p05[1])
    if L < abs(d4) - 1e-9:
        return []
    psi = math.atan2(p05[1], p05[0])
    phi = math.acos(max(-1.0, min(1.0, d4 / max(L, abs(d4)))))
    for th1 in (psi + phi + _HALF_PI, psi - phi + _HALF_PI):
        s1, c1 = math.sin(th1), math.cos(th1)

        # wrist: tool offset d6 fixes |theta5|
        c5 = (p[0] * s1 - p[1] * c1 - d4) / d6
        if abs(c5) > 1.0 + 1e-9:
            continue
        th5_mag = math.acos(max(-1.0, min(1.0, c5)))
        for th5 in (th5_mag, -th5_mag):
            s5 = math.sin(th5)
            singular = abs(s5) < 1e-8
            if singular:
                th6 = 0.0
            else:
                th6 = math.atan2(
                    -(R[0, 1] * s1 - R[1, 1] * c1) / s5,
                    (R[0, 0] * s1 - R[1, 0] * c1) / s5,
                )

            T01 = dh_transform(0.0, _HALF_PI, d1, th1)
            T45 = dh_transform(0.0, -_HALF_PI, d5, th5)
            T56 = dh_transform(0.0, 0.0, d6, th6)
            T14 = np.linalg.inv(T01) @ T06 @ np.linalg.inv(T45 @ T56)

            # planar 2R subchain for the shoulder-lift/elbow pair
            p13 = (T14 @ np.array([0.0, -d4, 0.0, 1.0]))[:3]
            r2 = float(p13 @ p13)
            c3 = (r2 - a2 * a2 - a3 * a3) / (2.0 * a2 * a3)
            if abs(c3) > 1.0 + 1e-9:
                continue
            th3_mag = math.acos(max(-1.0, min(1.0, c3)))
            for th3 in (th3_mag, -th3_mag):
                th2 = math.atan2(p13[1], p13[0]) - math.atan2(
                    a3 * math.sin(th3), a2 + a3 * math.cos(th3)
                )
                T13 = dh_transform(a2, 0.0, 0.0, th2) @ dh_transform(a3, 0.0, 0.0, th3)
                T34 = np.linalg.inv(T13) @ T14
                th4 = math.atan2(T34[1, 0], T34[0, 0])

                th6_out, th4_out = th6, th4
                if singular:
                    # joints 4 and 6 share an axis: put the whole spin on 6
                    th6_out = _wrap_pi(th4 + th6) if c5 > 0 else _wrap_pi(th6 - th4)
                    th4_out = 0.0

                theta = np.array([th1, th2, th3, th4_out, th5, th6_out])
                q_raw = theta - offsets
                q = np.empty(6)
                feasible = True
                for i, joint in enumerate(chain.joints):
                    wrapped = wrap_into_limits(
                        _wrap_pi(q_raw[i]), joint.limit_lo, joint.limit_hi
                    )
                    if wrapped is None:
                        feasible = False
                        break
                    q[i] = wrapped
                if not feasible:
                    continue

                pos_err, rot_err = pose_error(forward_kinematics(chain, q), target)
                if pos_err > IK_POSITION_TOL or rot_err > IK_ROTATION_TOL:
                    continue
                key = tuple(np.round(q, 9))
                if key in seen:
                    continue
                seen.add(key)
                solutions.append(q)
    return solutions


def _frames_match(fa: np.ndarray, fb: np.ndarray, tol: float = _POSE_MATCH_TOL) -> bool:
    return (
        np.max(np.abs(fa[:, :3, 3] - fb[:, :3, 3])) <= tol
        and np.max(np.abs(fa[:, :3, :3] - fb[:, :3, :3])) <= tol
    )


def _roll_about_tool_axis(pose: Pose, roll: float) -> Pose:
    T = pose.matrix().copy()
    c, s = math.cos(roll), math.sin(roll)
    Rz = np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])
    T[:3, :3] = T[:3, :3] @ Rz
    return Pose.from_matrix(T)


def compute_goal_configurations(
    chain: KinematicChain, goal: TaskGoal, start: np.ndarray
) -> GoalSet:
    """Expand a workspace goal into every usable joint-space goal, ranked.

    Collects up to max_distinct_poses arm poses from the solver (scanning a
    fixed grid of 32 tool-axis rolls in the free-orientation mode), expands
    each through its whole-revolution equivalents, deduplicates, and ranks by
    distance to start. An unreachable goal yields an empty set.
    """
    start = chain.require_in_limits(start)

    if goal.orientation_mode == "fixed":
        candidate_poses = [goal.target]
    else:
        candidate_poses = [
            _roll_about_tool_axis(goal.target, k * 2.0 * math.pi / _ROLL_GRID)
            for k in range(_ROLL_GRID)
        ]

    reps: list[np.ndarray] = []
    rep_frames: list[np.ndarray] = []
    rep_pose: list[int] = []
    kept_poses: list[Pose] = []
    pose_ids: dict[int, int] = {}
    for pidx, pose in enumerate(candidate_poses):
        if len(reps) >= goal.max_distinct_poses:
            break
        for q in analytic_ik_6r(chain, pose):
            frames = link_frames(chain, q)
            if any(_frames_match(frames, f) for f in rep_frames):
                continue
            reps.append(q)
            rep_frames.append(frames)
            if pidx not in pose_ids:
                pose_ids[pidx] = len(kept_poses)
                kept_poses.append(pose)
            rep_pose.append(pose_ids[pidx])
            if len(reps) >= goal.max_distinct_poses:
                break

    configs: list[np.ndarray] = []
    pose_index: list[int] = []
    for q, pid in zip(reps, rep_pose):
        for row in equivalent_configurations(chain, q):
            if any(np.max(np.abs(row - c)) < 1e-12 for c in configs):
                continue
            configs.append(row)
            pose_index.append(pid)

    if not configs:
        return GoalSet(
            configs=np.zeros((0, chain.n_joints)),
            start=start,
            distances=np.zeros(0),
            task_poses=(),
            pose_index=np.zeros(0, dtype=int),
        )

    configs_arr = np.array(configs)
    dists = np.linalg.norm(configs_arr - start, axis=1)
    order = np.argsort(dists, kind="stable")
    return GoalSet(
        configs=configs_arr[order],
        start=start,
        distances=dists[order],
        task_poses=tuple(kept_poses),
        pose_index=np.array(pose_index, dtype=int)[order],
    )


def select_goals(goal_set: GoalSet, k: int, strategy: str, seed: int = 0) -> GoalSet:
    """Keep k goals, either the closest by rank or a seeded random draw.

    The result is re-ranked against the same start; asking for k >= len
    returns the whole set.
    """
    if k < 1:
        raise ValueError("k must be at least 1")
    if strategy not in ("random", "closest"):
        raise ValueError(f"unknown selection strategy {strategy!r}")
    n = len(goal_set)
    if n == 0:
        raise ValueError("cannot select goals from an empty goal set")
    if k >= n:
        return goal_set
    if strategy == "closest":
        idx = np.arange(k)
    else:
        rng = np.random.default_rng(seed)
        idx = np.sort(rng.choice(n, size=k, replace=False))
    return GoalSet(
        configs=goal_set.configs[idx],
        start=goal_set.start,
        distances=goal_set.distances[idx],
        task_poses=goal_set.task_poses,
        pose_index=goal_set.pose_index[idx],
    )
