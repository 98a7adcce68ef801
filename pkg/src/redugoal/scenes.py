"""Deterministic desk-scale scene generators: a cubicle shelf and a vine row.

Both generators are pure functions of their spec (including the seed) and
emit workspace task goals alongside the obstacle geometry.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .collision import (
    Box,
    Capsule,
    CollisionChecker,
    DEFAULT_UR5_LINK_RADII,
    RobotGeometry,
    Scene,
    capsules_for_chain,
)
from .ik import TaskGoal, analytic_ik_6r, compute_goal_configurations
from .kinematics import KinematicChain, Pose, load_chain_preset


class SceneGenerationError(RuntimeError):
    """The requested scene cannot produce any usable task goal."""


# tool z-axis pointing along world +x (into the shelf / vine row)
_FACING_X = Rotation.from_euler("y", math.pi / 2).as_quat()


@dataclass(frozen=True)
class SceneSpec:
    """Tagged generator spec; params are generator-specific overrides."""

    generator: str
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.generator not in ("cubicles", "vine", "file"):
            raise ValueError(f"unknown scene generator {self.generator!r}")

    def to_dict(self) -> dict:
        return {"generator": self.generator, "seed": self.seed, "params": dict(self.params)}

    @classmethod
    def from_dict(cls, data: dict) -> "SceneSpec":
        return cls(
            generator=data["generator"],
            seed=data.get("seed", 0),
            params=data.get("params", {}),
        )

    @classmethod
    def load(cls, path: str) -> "SceneSpec":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")


def reference_configuration(chain: KinematicChain) -> np.ndarray:
    """An always-in-limits configuration (midpoint of every joint range)."""
    return 0.5 * (chain.limits_lo + chain.limits_hi)


def build_cubicles(
    spec: SceneSpec, chain: KinematicChain | None = None
) -> tuple[Scene, list[TaskGoal]]:
    """Axis-aligned shelf of rows x cols cubicles facing the arm.

    One fixed-orientation goal sits at each cubicle centre. Raises when no
    centre is reachable by the closed-form solver.
    """
    if chain is None:
        chain = load_chain_preset("ur5-elbow-limited")
    p = dict(spec.params)
    rows = int(p.pop("rows", 3))
    cols = int(p.pop("cols", 3))
    size = float(p.pop("cubicle_size", 0.30))
    wall = float(p.pop("wall_thickness", 0.01))
    front = float(p.pop("front_distance", 0.55))
    center_z = float(p.pop("center_height", 0.089159))
    if p:
        raise ValueError(f"unknown cubicle parameters: {sorted(p)}")
    if rows < 1 or cols < 1 or size <= 0 or front <= 0:
        raise ValueError("cubicle dimensions must be positive")
    if wall <= 0 or wall >= size:
        raise ValueError("wall thickness must be positive and below cubicle size")

    depth = size
    width = cols * size
    height = rows * size
    x_mid = front + depth / 2.0
    y_lo = -width / 2.0
    z_lo = center_z - height / 2.0
    half_t = wall / 2.0

    boxes: list[Box] = [
        # back panel
        Box(
            center=[front + depth + half_t, 0.0, center_z],
            half_extents=[half_t, width / 2.0 + wall, height / 2.0 + wall],
        )
    ]
    for r in range(rows + 1):
        boxes.append(
            Box(
                center=[x_mid, 0.0, z_lo + r * size],
                half_extents=[depth / 2.0, width / 2.0 + wall, half_t],
            )
        )
    for c in range(cols + 1):
        boxes.append(
            Box(
                center=[x_mid, y_lo + c * size, center_z],
                half_extents=[depth / 2.0, half_t, height / 2.0 + wall],
            )
        )

    scene = Scene(obstacles=tuple(boxes), name=f"cubicles-{rows}x{cols}")

    goals: list[TaskGoal] = []
    reachable = 0
    for r in range(rows):
        for c in range(cols):
            centre = np.array(
                [x_mid, y_lo + (c + 0.5) * size, z_lo + (r + 0.5) * size]
            )
            pose = Pose(position=centre, quaternion=_FACING_X)
            goals.append(TaskGoal(target=pose, orientation_mode="fixed"))
            if analytic_ik_6r(chain, pose):
                reachable += 1
    if reachable == 0:
        raise SceneGenerationError("no cubicle centre is reachable by the arm")
    return scene, goals


def build_vine(
    spec: SceneSpec,
    chain: KinematicChain | None = None,
    robot: RobotGeometry | None = None,
) -> tuple[Scene, list[TaskGoal]]:
    """Row of thin vertical canes with cut goals, plus an optional back wall.

    Cut goals are free to spin about the tool axis and are kept only when at
    least one inverse-kinematics solution is collision-free in the scene.
    """
    if chain is None:
        chain = load_chain_preset("ur5-vine")
    if robot is None:
        robot = capsules_for_chain(chain, DEFAULT_UR5_LINK_RADII)
    p = dict(spec.params)
    n_canes = int(p.pop("canes", 40))
    radius = float(p.pop("cane_radius", 0.005))
    n_cuts = int(p.pop("cuts", 10))
    plane_x = float(p.pop("plane_distance", 0.55))
    y_half = float(p.pop("row_half_width", 0.45))
    z_lo = float(p.pop("z_low", 0.05))
    z_hi = float(p.pop("z_high", 0.75))
    back_wall = bool(p.pop("back_wall", True))
    max_poses = int(p.pop("max_poses", 5))
    standoff = float(p.pop("cut_standoff", 0.08))
    if p:
        raise ValueError(f"unknown vine parameters: {sorted(p)}")
    if n_canes < 1 or radius <= 0 or n_cuts < 1 or z_hi <= z_lo:
        raise ValueError("vine dimensions must be positive")

    rng = np.random.default_rng(spec.seed)
    canes: list[Capsule] = []
    for _ in range(n_canes):
        base_y = rng.uniform(-y_half, y_half)
        base_x = plane_x + rng.uniform(-0.04, 0.04)
        sway = rng.uniform(-0.08, 0.08, 2)
        canes.append(
            Capsule(
                p0=[base_x, base_y, z_lo],
                p1=[base_x + sway[0], base_y + sway[1], z_hi],
                radius=radius,
            )
        )

    obstacles: list = list(canes)
    if back_wall:
        obstacles.append(
            Box(center=[-0.17, 0.0, 0.55], half_extents=[0.04, 1.2, 1.2])
        )
    scene = Scene(obstacles=tuple(obstacles), name="vine-row")

    checker = CollisionChecker(scene, robot, chain)
    ref = reference_configuration(chain)
    goals: list[TaskGoal] = []
    attempts = 0
    max_attempts = 12 * n_cuts
    while len(goals) < n_cuts and attempts < max_attempts:
        attempts += 1
        cane = canes[int(rng.integers(n_canes))]
        t = rng.uniform(0.2, 0.9)
        point = cane.p0 + t * (cane.p1 - cane.p0)
        # cutter stands off the cane on the arm's side, pointing at it
        pose = Pose(
            position=point - np.array([standoff, 0.0, 0.0]), quaternion=_FACING_X
        )
        goal = TaskGoal(
            target=pose,
            orientation_mode="free-about-tool-axis",
            max_distinct_poses=max_poses,
        )
        goal_set = compute_goal_configurations(chain, goal, ref)
        if len(goal_set) == 0:
            continue
        if np.all(checker.configs_in_collision(goal_set.configs)):
            continue
        goals.append(goal)
    if not goals:
        raise SceneGenerationError("no feasible cut goal could be sampled")
    return scene, goals


def build_scene(
    spec: SceneSpec,
    chain: KinematicChain | None = None,
    robot: RobotGeometry | None = None,
) -> tuple[Scene, list[TaskGoal]]:
    """Dispatch a SceneSpec to its generator (or load a saved scene file)."""
    if spec.generator == "cubicles":
        return build_cubicles(spec, chain)
    if spec.generator == "vine":
        return build_vine(spec, chain, robot)
    path = spec.params.get("path")
    if not path:
        raise ValueError("file scene spec needs params.path")
    with open(path, encoding="utf-8") as fh:
        data = json.load(fh)
    scene = Scene.from_dict(data["scene"])
    goals = [TaskGoal.from_dict(g) for g in data.get("goals", [])]
    return scene, goals


def save_scene_with_goals(
    path: str, scene: Scene, goals: list[TaskGoal]
) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(
            {"scene": scene.to_dict(), "goals": [g.to_dict() for g in goals]},
            fh,
            indent=2,
        )
        fh.write("\n")
