"""Collision checking between robot link capsules and scene primitives.

Distances are signed clearances: geometric distance minus summed radii where
radii apply, so values <= 0 mean contact or penetration. Scenes stay small
(desk scale), so every pair is checked; a cheap conservative bound culls
pairs before the exact kernels run.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.transform import Rotation

from .kinematics import KinematicChain, batch_link_frames, config_distance

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_SEG_BOX_ITERS = 40


@dataclass(frozen=True)
class Sphere:
    center: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        if self.radius <= 0:
            raise ValueError("sphere radius must be positive")

    def to_dict(self) -> dict:
        return {"type": "sphere", "center": self.center.tolist(), "radius": self.radius}


@dataclass(frozen=True)
class Capsule:
    p0: np.ndarray
    p1: np.ndarray
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float))
        object.__setattr__(self, "p1", np.asarray(self.p1, dtype=float))
        if self.radius <= 0:
            raise ValueError("capsule radius must be positive")

    def to_dict(self) -> dict:
        return {
            "type": "capsule",
            "p0": self.p0.tolist(),
            "p1": self.p1.tolist(),
            "radius": self.radius,
        }


@dataclass(frozen=True)
class Box:
    center: np.ndarray
    half_extents: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float))
        object.__setattr__(self, "half_extents", np.asarray(self.half_extents, dtype=float))
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))
        if np.any(self.half_extents <= 0):
            raise ValueError("box half-extents must be positive")

    def to_dict(self) -> dict:
        return {
            "type": "box",
            "center": self.center.tolist(),
            "half_extents": self.half_extents.tolist(),
            "quaternion": Rotation.from_matrix(self.rotation).as_quat().tolist(),
        }

    def project(self, p: np.ndarray) -> np.ndarray:
        """Closest point of the solid box to p."""
        local = self.rotation.T @ (p - self.center)
        clamped = np.clip(local, -self.half_extents, self.half_extents)
        return self.rotation @ clamped + self.center


Shape = Sphere | Capsule | Box


def shape_from_dict(data: dict) -> Shape:
    kind = data["type"]
    if kind == "sphere":
        return Sphere(center=data["center"], radius=data["radius"])
    if kind == "capsule":
        return Capsule(p0=data["p0"], p1=data["p1"], radius=data["radius"])
    if kind == "box":
        rot = Rotation.from_quat(data.get("quaternion", [0, 0, 0, 1])).as_matrix()
        return Box(center=data["center"], half_extents=data["half_extents"], rotation=rot)
    raise ValueError(f"unknown shape type {kind!r}")


@dataclass(frozen=True)
class Scene:
    """Static obstacles the robot must avoid."""

    obstacles: tuple[Shape, ...]
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    def to_dict(self) -> dict:
        return {"name": self.name, "obstacles": [o.to_dict() for o in self.obstacles]}

    @classmethod
    def from_dict(cls, data: dict) -> "Scene":
        return cls(
            obstacles=tuple(shape_from_dict(o) for o in data["obstacles"]),
            name=data.get("name", ""),
        )

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, path: str) -> "Scene":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass(frozen=True)
class RobotGeometry:
    """Per-link collision capsules, expressed in the link's own frame."""

    link_capsules: tuple[tuple[Capsule, ...], ...]
    self_check_pairs: tuple[tuple[int, int], ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(
            self, "link_capsules", tuple(tuple(caps) for caps in self.link_capsules)
        )
        object.__setattr__(
            self, "self_check_pairs", tuple(tuple(p) for p in self.self_check_pairs)
        )

    @property
    def n_links(self) -> int:
        return len(self.link_capsules)


def capsules_for_chain(
    chain: KinematicChain, link_radii, tool_radius: float | None = None
) -> RobotGeometry:
    """One capsule per link spanning from the parent joint to the link frame.

    In standard DH the parent joint origin sits at -(a, d sin(alpha),
    d cos(alpha)) in the link's own frame, so the capsule covers the physical
    link body for arms like the UR series. The last link's frame includes the
    chain's tool transform, so its capsule endpoints are re-expressed there;
    when tool_radius is given and the tool transform carries an offset, an
    extra capsule models the tool body from the flange to the tool point.
    """
    link_radii = np.asarray(link_radii, dtype=float)
    if link_radii.shape != (chain.n_joints,):
        raise ValueError("need one radius per link")
    caps: list[tuple[Capsule, ...]] = []
    for joint, r in zip(chain.joints, link_radii):
        start = -np.array(
            [joint.a, joint.d * math.sin(joint.alpha), joint.d * math.cos(joint.alpha)]
        )
        caps.append((Capsule(p0=start, p1=np.zeros(3), radius=float(r)),))

    inv_tool = np.linalg.inv(chain.tool_frame)
    flange = inv_tool[:3, 3]
    if np.max(np.abs(inv_tool - np.eye(4))) > 1e-12:
        last = caps[-1][0]
        caps[-1] = (
            Capsule(
                p0=inv_tool[:3, :3] @ last.p0 + flange,
                p1=inv_tool[:3, :3] @ last.p1 + flange,
                radius=last.radius,
            ),
        )
        if tool_radius is not None and np.linalg.norm(flange) > 1e-12:
            caps[-1] = caps[-1] + (
                Capsule(p0=flange, p1=np.zeros(3), radius=float(tool_radius)),
            )
    return RobotGeometry(link_capsules=tuple(caps))


DEFAULT_UR5_LINK_RADII = (0.05, 0.045, 0.035, 0.03, 0.03, 0.03)
DEFAULT_TOOL_LENGTH = 0.12
DEFAULT_TOOL_RADIUS = 0.025


# ---------------------------------------------------------------------------
# distance kernels (batched; trailing dimension is xyz)


def _point_segment_distance(p, a, b):
    """Distance from points p to segments (a, b); all (..., 3)."""
    ab = b - a
    denom = np.einsum("...i,...i", ab, ab)
    t = np.einsum("...i,...i", p - a, ab) / np.where(denom < 1e-30, 1.0, denom)
    t = np.where(denom < 1e-30, 0.0, np.clip(t, 0.0, 1.0))
    diff = p - (a + t[..., None] * ab)
    return np.sqrt(np.einsum("...i,...i", diff, diff))


def _segment_segment_distance(p0, p1, q0, q1):
    """Distance between segments (p0, p1) and (q0, q1); all (..., 3)."""
    d1 = p1 - p0
    d2 = q1 - q0
    r = p0 - q0
    a = np.einsum("...i,...i", d1, d1)
    e = np.einsum("...i,...i", d2, d2)
    b = np.einsum("...i,...i", d1, d2)
    c = np.einsum("...i,...i", d1, r)
    f = np.einsum("...i,...i", d2, r)
    eps = 1e-14
    denom = a * e - b * b
    s = np.where(
        denom > eps,
        np.clip((b * f - c * e) / np.where(denom > eps, denom, 1.0), 0.0, 1.0),
        0.0,
    )
    safe_e = np.where(e > eps, e, 1.0)
    t = np.where(e > eps, (b * s + f) / safe_e, 0.0)
    safe_a = np.where(a > eps, a, 1.0)
    s = np.where(t < 0.0, np.clip(-c / safe_a, 0.0, 1.0), s)
    s = np.where(t > 1.0, np.clip((b - c) / safe_a, 0.0, 1.0), s)
    s = np.where(a <= eps, 0.0, s)
    t = np.clip(t, 0.0, 1.0)
    diff = (p0 + s[..., None] * d1) - (q0 + t[..., None] * d2)
    return np.sqrt(np.einsum("...i,...i", diff, diff))


def _point_box_signed(local, half):
    """Signed distance of points to origin-centered boxes; local (...,3), half (...,3)."""
    q = np.abs(local) - half
    outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
    inside = np.minimum(np.max(q, axis=-1), 0.0)
    return outside + inside


_GRID_N = 32
_GRID_TS = np.linspace(0.0, 1.0, _GRID_N + 1)


def _box_gap_squared(p0, u, half, t):
    """Squared box clearance of p0 + t*u (box frame); zero inside the box."""
    p = p0 + t[..., None] * u
    q = np.maximum(np.abs(p) - half, 0.0)
    return np.einsum("...i,...i", q, q)


def _golden_min(p0, u, half, lo, hi, iters):
    """Golden-section minimum of the squared clearance over t in [lo, hi].

    The clearance is convex along the segment, so any bracket that contains
    the grid argmin contains the true minimizer.
    """
    for _ in range(iters):
        c = hi - _GOLDEN * (hi - lo)
        d = lo + _GOLDEN * (hi - lo)
        shrink_hi = _box_gap_squared(p0, u, half, c) < _box_gap_squared(p0, u, half, d)
        hi = np.where(shrink_hi, d, hi)
        lo = np.where(shrink_hi, lo, c)
    t_best = 0.5 * (lo + hi)
    return np.sqrt(_box_gap_squared(p0, u, half, t_best)), t_best


def _segment_box_scan(p0, u, half):
    """Fixed-grid squared clearances, shape (..., len(_GRID_TS))."""
    pts = p0[..., None, :] + _GRID_TS[:, None] * u[..., None, :]
    q = np.maximum(np.abs(pts) - half[..., None, :], 0.0)
    return np.einsum("...i,...i", q, q)


def _segment_box_distance(p0, u, half):
    """Min distance from segments p(t) = p0 + t*u, t in [0,1], to boxes.

    Inputs live in the box frame. A fixed-grid scan brackets the convex
    minimum, golden section polishes it; penetration is reported as the
    (negative) signed depth at the minimizing parameter.
    """
    d2 = _segment_box_scan(p0, u, half)
    t_idx = np.argmin(d2, axis=-1)
    lo = np.maximum(_GRID_TS[t_idx] - 1.0 / _GRID_N, 0.0)
    hi = np.minimum(_GRID_TS[t_idx] + 1.0 / _GRID_N, 1.0)
    best, t_best = _golden_min(p0, u, half, lo, hi, _SEG_BOX_ITERS)
    penetrating = best <= 1e-12
    if np.any(penetrating):
        signed = _point_box_signed(p0 + t_best[..., None] * u, half)
        best = np.where(penetrating, np.minimum(signed, 0.0), best)
    return best


def _segment_box_collides(p0, u, half, radius):
    """Boolean: does each segment pass within radius of its box? All (K, ...).

    A grid scan decides almost every pair outright: a grid point inside the
    radius proves contact, and the Lipschitz bound |f(t) - f(t')| <=
    |u| |t - t'| clears pairs whose grid minimum exceeds radius by more than
    half a grid cell of travel. The thin ambiguous band is rescanned on the
    bracketing cell, and only what survives that is polished exactly.
    """
    speed = np.sqrt(np.einsum("...i,...i", u, u))
    d2 = _segment_box_scan(p0, u, half)
    min_idx = np.argmin(d2, axis=-1)
    dmin = np.sqrt(np.take_along_axis(d2, min_idx[..., None], axis=-1)[..., 0])
    hit = dmin <= radius
    margin = speed / (2.0 * _GRID_N)
    amb = np.nonzero(~hit & (dmin <= radius + margin))[0]
    if amb.size:
        # second scan over the bracketing cell shrinks the margin 16-fold
        lo = np.maximum(_GRID_TS[min_idx[amb]] - 1.0 / _GRID_N, 0.0)
        hi = np.minimum(_GRID_TS[min_idx[amb]] + 1.0 / _GRID_N, 1.0)
        ts = lo[:, None] + np.linspace(0.0, 1.0, _GRID_N + 1)[None, :] * (hi - lo)[:, None]
        pts = p0[amb, None, :] + ts[..., None] * u[amb, None, :]
        q = np.maximum(np.abs(pts) - half[amb, None, :], 0.0)
        d2_fine = np.einsum("...i,...i", q, q)
        fine_idx = np.argmin(d2_fine, axis=-1)
        dmin_fine = np.sqrt(np.take_along_axis(d2_fine, fine_idx[..., None], -1)[..., 0])
        hit[amb] = dmin_fine <= radius[amb]
        margin_fine = speed[amb] * (hi - lo) / (2.0 * _GRID_N)
        amb2 = np.nonzero(~hit[amb] & (dmin_fine <= radius[amb] + margin_fine))[0]
        if amb2.size:
            sel = amb[amb2]
            cell = (hi - lo)[amb2] / _GRID_N
            t_best = np.take_along_axis(ts, fine_idx[:, None], -1)[amb2, 0]
            refined, _ = _golden_min(
                p0[sel],
                u[sel],
                half[sel],
                np.maximum(t_best - cell, 0.0),
                np.minimum(t_best + cell, 1.0),
                24,
            )
            hit[sel] = refined <= radius[sel]
    return hit


def _box_box_distance(b1: Box, b2: Box) -> float:
    """Distance between two boxes by alternating projections (0 when touching)."""
    x = b1.center.copy()
    for _ in range(200):
        y = b2.project(x)
        x_next = b1.project(y)
        if np.linalg.norm(x_next - x) < 1e-14:
            x = x_next
            break
        x = x_next
    return float(np.linalg.norm(x - b2.project(x)))


def shape_distance(a: Shape, b: Shape) -> float:
    """Signed clearance between two shapes; <= 0 means contact or penetration."""
    if isinstance(a, Sphere) and isinstance(b, Sphere):
        return float(np.linalg.norm(a.center - b.center)) - a.radius - b.radius
    if isinstance(a, Sphere) and isinstance(b, Capsule):
        d = _point_segment_distance(a.center, b.p0, b.p1)
        return float(d) - a.radius - b.radius
    if isinstance(a, Capsule) and isinstance(b, Sphere):
        return shape_distance(b, a)
    if isinstance(a, Capsule) and isinstance(b, Capsule):
        d = _segment_segment_distance(a.p0, a.p1, b.p0, b.p1)
        return float(d) - a.radius - b.radius
    if isinstance(a, Sphere) and isinstance(b, Box):
        local = b.rotation.T @ (a.center - b.center)
        return float(_point_box_signed(local, b.half_extents)) - a.radius
    if isinstance(a, Box) and isinstance(b, Sphere):
        return shape_distance(b, a)
    if isinstance(a, Capsule) and isinstance(b, Box):
        p0 = b.rotation.T @ (a.p0 - b.center)
        p1 = b.rotation.T @ (a.p1 - b.center)
        d = _segment_box_distance(p0[None], (p1 - p0)[None], b.half_extents[None])
        return float(d[0]) - a.radius
    if isinstance(a, Box) and isinstance(b, Capsule):
        return shape_distance(b, a)
    if isinstance(a, Box) and isinstance(b, Box):
        return _box_box_distance(a, b)
    raise TypeError(f"unsupported shape pair {type(a).__name__}/{type(b).__name__}")


# ---------------------------------------------------------------------------
# robot-vs-scene checking


class CollisionChecker:
    """Precomputed arrays for fast repeated robot-vs-scene queries.

    Build once per (scene, robot, chain); every query then runs as a handful
    of vectorized kernels over all (link capsule, obstacle) pairs.
    """

    def __init__(self, scene: Scene, robot: RobotGeometry, chain: KinematicChain):
        if robot.n_links != chain.n_joints:
            raise ValueError("robot geometry link count must match chain joints")
        self.scene = scene
        self.robot = robot
        self.chain = chain

        link_idx, p0s, p1s, radii = [], [], [], []
        for li, caps in enumerate(robot.link_capsules):
            for cap in caps:
                link_idx.append(li)
                p0s.append(cap.p0)
                p1s.append(cap.p1)
                radii.append(cap.radius)
        self._link_idx = np.array(link_idx, dtype=int)
        self._cap_p0 = np.array(p0s).reshape(-1, 3)
        self._cap_p1 = np.array(p1s).reshape(-1, 3)
        self._cap_r = np.array(radii)
        self._cap_half = 0.5 * np.linalg.norm(self._cap_p1 - self._cap_p0, axis=-1)

        spheres = [o for o in scene.obstacles if isinstance(o, Sphere)]
        capsules = [o for o in scene.obstacles if isinstance(o, Capsule)]
        boxes = [o for o in scene.obstacles if isinstance(o, Box)]
        self._sph_c = np.array([s.center for s in spheres]).reshape(-1, 3)
        self._sph_r = np.array([s.radius for s in spheres])
        self._obs_q0 = np.array([c.p0 for c in capsules]).reshape(-1, 3)
        self._obs_q1 = np.array([c.p1 for c in capsules]).reshape(-1, 3)
        self._obs_cr = np.array([c.radius for c in capsules])
        self._box_c = np.array([b.center for b in boxes]).reshape(-1, 3)
        self._box_r = np.array([b.rotation for b in boxes]).reshape(-1, 3, 3)
        self._box_h = np.array([b.half_extents for b in boxes]).reshape(-1, 3)
        self._boxes_axis_aligned = bool(
            len(boxes) == 0 or np.allclose(self._box_r, np.eye(3), atol=1e-12)
        )

        self._pairs = tuple(robot.self_check_pairs)
        self._nothing_to_check = (
            not scene.obstacles and not self._pairs
        ) or self._cap_r.size == 0

    def _world_capsules(self, Q: np.ndarray):
        frames = batch_link_frames(self.chain, Q)[:, self._link_idx]
        R = frames[..., :3, :3]
        t = frames[..., :3, 3]
        e0 = np.einsum("mkij,kj->mki", R, self._cap_p0) + t
        e1 = np.einsum("mkij,kj->mki", R, self._cap_p1) + t
        return e0, e1

    def configs_in_collision(self, Q: np.ndarray) -> np.ndarray:
        """Boolean per configuration; Q has shape (m, N)."""
        Q = np.asarray(Q, dtype=float)
        if Q.ndim == 1:
            Q = Q[None]
        m = Q.shape[0]
        hit = np.zeros(m, dtype=bool)
        if self._nothing_to_check:
            return hit
        e0, e1 = self._world_capsules(Q)
        mid = 0.5 * (e0 + e1)

        if self._sph_r.size:
            d = _point_segment_distance(
                self._sph_c[None, None], e0[:, :, None], e1[:, :, None]
            )
            clear = d - self._cap_r[None, :, None] - self._sph_r[None, None]
            hit |= np.any(clear <= 0.0, axis=(1, 2))

        if self._obs_cr.size:
            d = _segment_segment_distance(
                e0[:, :, None],
                e1[:, :, None],
                self._obs_q0[None, None],
                self._obs_q1[None, None],
            )
            clear = d - self._cap_r[None, :, None] - self._obs_cr[None, None]
            hit |= np.any(clear <= 0.0, axis=(1, 2))

        if self._box_h.size:
            # cull on the exact midpoint-to-box distance: the segment cannot
            # get closer than that minus half its length
            rel_mid = mid[:, :, None] - self._box_c[None, None]
            if self._boxes_axis_aligned:
                local_mid = rel_mid
            else:
                local_mid = np.einsum("bji,mkbj->mkbi", self._box_r, rel_mid)
            gap = np.maximum(np.abs(local_mid) - self._box_h[None, None], 0.0)
            centre_clear = np.sqrt(np.einsum("...i,...i", gap, gap))
            bound = (
                centre_clear
                - self._cap_half[None, :, None]
                - self._cap_r[None, :, None]
            )
            mi, ki, bi = np.nonzero(bound <= 0.0)
            if mi.size:
                rel0 = e0[mi, ki] - self._box_c[bi]
                rel1 = e1[mi, ki] - self._box_c[bi]
                if self._boxes_axis_aligned:
                    l0, l1 = rel0, rel1
                else:
                    R = self._box_r[bi]
                    l0 = np.einsum("kji,kj->ki", R, rel0)
                    l1 = np.einsum("kji,kj->ki", R, rel1)
                col = _segment_box_collides(
                    l0, l1 - l0, self._box_h[bi], self._cap_r[ki]
                )
                hit[mi[col]] = True

        for i, j in self._pairs:
            sel_i = self._link_idx == i
            sel_j = self._link_idx == j
            d = _segment_segment_distance(
                e0[:, sel_i, None],
                e1[:, sel_i, None],
                e0[:, None, sel_j],
                e1[:, None, sel_j],
            )
            clear = (
                d
                - self._cap_r[sel_i][None, :, None]
                - self._cap_r[sel_j][None, None, :]
            )
            hit |= np.any(clear <= 0.0, axis=(1, 2))

        return hit

    def config_in_collision(self, q: np.ndarray) -> bool:
        return bool(self.configs_in_collision(np.asarray(q)[None])[0])

    def edge_in_collision(
        self, q1: np.ndarray, q2: np.ndarray, step: float, chunk: int = 32
    ) -> bool:
        samples = edge_samples(q1, q2, step)
        for off in range(0, len(samples), chunk):
            if np.any(self.configs_in_collision(samples[off : off + chunk])):
                return True
        return False

    def first_collision(self, samples: np.ndarray, chunk: int = 32) -> int:
        """Index of the first colliding sample, or -1 when all are free."""
        for off in range(0, len(samples), chunk):
            flags = self.configs_in_collision(samples[off : off + chunk])
            if np.any(flags):
                return off + int(np.argmax(flags))
        return -1


def edge_samples(q1: np.ndarray, q2: np.ndarray, step: float) -> np.ndarray:
    """Interpolated configurations at fractions i/n, n = ceil(distance/step).

    Endpoints are always included, and halving the step yields a superset of
    the checked configurations whenever the segment counts divide.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(q2, dtype=float)
    dist = config_distance(q1, q2)
    n = max(1, math.ceil(dist / step))
    ts = np.arange(n + 1) / n
    return q1[None] + ts[:, None] * (q2 - q1)[None]


def config_in_collision(
    scene: Scene, robot: RobotGeometry, chain: KinematicChain, q: np.ndarray
) -> bool:
    """True iff any link capsule touches an obstacle or a self-check pair."""
    q = chain.require_in_limits(q)
    return CollisionChecker(scene, robot, chain).config_in_collision(q)


def edge_in_collision(
    scene: Scene,
    robot: RobotGeometry,
    chain: KinematicChain,
    q1: np.ndarray,
    q2: np.ndarray,
    step: float,
) -> bool:
    """Resolution-complete motion check at joint-space spacing <= step."""
    q1 = chain.require_in_limits(q1)
    q2 = chain.require_in_limits(q2)
    return CollisionChecker(scene, robot, chain).edge_in_collision(q1, q2, step)
