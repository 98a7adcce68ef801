"""Serial-arm model: DH joints with limits, forward kinematics, and
enumeration of configurations that place every link identically."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from itertools import product

import numpy as np
from scipy.spatial.transform import Rotation

TWO_PI = 2.0 * math.pi


class LimitError(ValueError):
    """A configuration violates the chain's joint limits."""


class UnsupportedChainError(ValueError):
    """The chain geometry does not admit the requested closed-form treatment."""


@dataclass(frozen=True)
class JointModel:
    """One rotational joint described by a standard (distal) DH row.

    Limits are half-open: an angle is admissible iff limit_lo <= q < limit_hi.
    """

    a: float
    alpha: float
    d: float
    theta_offset: float = 0.0
    limit_lo: float = -TWO_PI
    limit_hi: float = TWO_PI

    def __post_init__(self) -> None:
        if not self.limit_lo < self.limit_hi:
            raise ValueError(f"joint limits empty: [{self.limit_lo}, {self.limit_hi})")
        if self.limit_hi - self.limit_lo > 2 * TWO_PI + 1e-12:
            raise ValueError("joint span exceeds two full revolutions")

    @property
    def span(self) -> float:
        return self.limit_hi - self.limit_lo

    def max_offset_count(self) -> int:
        """Largest number of 2*pi-separated in-limit angles any position admits."""
        ratio = self.span / TWO_PI
        nearest = round(ratio)
        if abs(ratio - nearest) < 1e-9:
            return max(1, nearest)
        return max(1, math.ceil(ratio))


@dataclass(frozen=True)
class Pose:
    """Rigid end-effector pose: position in meters, quaternion scalar-last (x,y,z,w)."""

    position: np.ndarray
    quaternion: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "position", np.asarray(self.position, dtype=float))
        object.__setattr__(self, "quaternion", np.asarray(self.quaternion, dtype=float))
        if self.position.shape != (3,) or self.quaternion.shape != (4,):
            raise ValueError("pose needs a 3-vector position and 4-vector quaternion")
        if abs(np.linalg.norm(self.quaternion) - 1.0) > 1e-12:
            raise ValueError("quaternion is not unit length")

    @classmethod
    def from_matrix(cls, T: np.ndarray) -> "Pose":
        q = Rotation.from_matrix(T[:3, :3]).as_quat()
        q /= np.linalg.norm(q)
        return cls(position=T[:3, 3].copy(), quaternion=q)

    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = Rotation.from_quat(self.quaternion).as_matrix()
        T[:3, 3] = self.position
        return T

    def to_dict(self) -> dict:
        return {"position": self.position.tolist(), "quaternion": self.quaternion.tolist()}

    @classmethod
    def from_dict(cls, data: dict) -> "Pose":
        q = np.asarray(data["quaternion"], dtype=float)
        return cls(position=np.asarray(data["position"], dtype=float), quaternion=q / np.linalg.norm(q))


def pose_error(a: Pose, b: Pose) -> tuple[float, float]:
    """Position (m) and rotation (rad) discrepancy between two poses."""
    pos = float(np.linalg.norm(a.position - b.position))
    ra = Rotation.from_quat(a.quaternion)
    rb = Rotation.from_quat(b.quaternion)
    rot = float((ra.inv() * rb).magnitude())
    return pos, rot


@dataclass(frozen=True)
class KinematicChain:
    """Ordered rotational joints plus fixed base and tool transforms."""

    joints: tuple[JointModel, ...]
    base_frame: np.ndarray = field(default_factory=lambda: np.eye(4))
    tool_frame: np.ndarray = field(default_factory=lambda: np.eye(4))
    name: str = ""

    def __post_init__(self) -> None:
        object.__setattr__(self, "joints", tuple(self.joints))
        if len(self.joints) < 1:
            raise ValueError("chain needs at least one joint")
        object.__setattr__(self, "base_frame", np.asarray(self.base_frame, dtype=float))
        object.__setattr__(self, "tool_frame", np.asarray(self.tool_frame, dtype=float))

    @property
    def n_joints(self) -> int:
        return len(self.joints)

    @property
    def limits_lo(self) -> np.ndarray:
        return np.array([j.limit_lo for j in self.joints])

    @property
    def limits_hi(self) -> np.ndarray:
        return np.array([j.limit_hi for j in self.joints])

    def in_limits(self, q: np.ndarray) -> bool:
        q = np.asarray(q, dtype=float)
        if q.shape != (self.n_joints,):
            raise ValueError(f"expected {self.n_joints} joint angles, got shape {q.shape}")
        return bool(np.all(self.limits_lo <= q) and np.all(q < self.limits_hi))

    def require_in_limits(self, q: np.ndarray) -> np.ndarray:
        q = np.asarray(q, dtype=float)
        if not self.in_limits(q):
            raise LimitError(f"configuration {q} outside joint limits")
        return q

    def random_configuration(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.limits_lo, self.limits_hi)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "joints": [
                {
                    "a": j.a,
                    "alpha": j.alpha,
                    "d": j.d,
                    "theta_offset": j.theta_offset,
                    "limit_lo": j.limit_lo,
                    "limit_hi": j.limit_hi,
                }
                for j in self.joints
            ],
            "base_frame": Pose.from_matrix(self.base_frame).to_dict(),
            "tool_frame": Pose.from_matrix(self.tool_frame).to_dict(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "KinematicChain":
        joints = tuple(
            JointModel(
                a=j["a"],
                alpha=j["alpha"],
                d=j["d"],
                theta_offset=j.get("theta_offset", 0.0),
                limit_lo=j["limit_lo"],
                limit_hi=j["limit_hi"],
            )
            for j in data["joints"]
        )
        return cls(
            joints=joints,
            base_frame=Pose.from_dict(data["base_frame"]).matrix(),
            tool_frame=Pose.from_dict(data["tool_frame"]).matrix(),
            name=data.get("name", ""),
        )


def dh_transform(a: float, alpha: float, d: float, theta: float) -> np.ndarray:
    """Standard DH link transform RotZ(theta) TransZ(d) TransX(a) RotX(alpha)."""
    ct, st = math.cos(theta), math.sin(theta)
    ca, sa = math.cos(alpha), math.sin(alpha)
    return np.array(
        [
            [ct, -st * ca, st * sa, a * ct],
            [st, ct * ca, -ct * sa, a * st],
            [0.0, sa, ca, d],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )


def link_frames(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    """World frame of every link as an (N, 4, 4) array.

    Frame i is the pose of link i; the last frame includes the tool transform
    and therefore equals the forward_kinematics output.
    """
    q = np.asarray(q, dtype=float)
    if q.shape != (chain.n_joints,):
        raise ValueError(f"expected {chain.n_joints} joint angles, got shape {q.shape}")
    frames = np.empty((chain.n_joints, 4, 4))
    T = chain.base_frame
    for i, joint in enumerate(chain.joints):
        T = T @ dh_transform(joint.a, joint.alpha, joint.d, q[i] + joint.theta_offset)
        frames[i] = T
    frames[-1] = frames[-1] @ chain.tool_frame
    return frames


def batch_link_frames(chain: KinematicChain, Q: np.ndarray) -> np.ndarray:
    """link_frames for a batch of configurations, shape (m, N) -> (m, N, 4, 4)."""
    Q = np.asarray(Q, dtype=float)
    if Q.ndim != 2 or Q.shape[1] != chain.n_joints:
        raise ValueError(f"expected (m, {chain.n_joints}) configurations, got {Q.shape}")
    m = Q.shape[0]
    frames = np.empty((m, chain.n_joints, 4, 4))
    T = np.broadcast_to(chain.base_frame, (m, 4, 4))
    for i, joint in enumerate(chain.joints):
        theta = Q[:, i] + joint.theta_offset
        ct, st = np.cos(theta), np.sin(theta)
        ca, sa = math.cos(joint.alpha), math.sin(joint.alpha)
        Ti = np.zeros((m, 4, 4))
        Ti[:, 0, 0] = ct
        Ti[:, 0, 1] = -st * ca
        Ti[:, 0, 2] = st * sa
        Ti[:, 0, 3] = joint.a * ct
        Ti[:, 1, 0] = st
        Ti[:, 1, 1] = ct * ca
        Ti[:, 1, 2] = -ct * sa
        Ti[:, 1, 3] = joint.a * st
        Ti[:, 2, 1] = sa
        Ti[:, 2, 2] = ca
        Ti[:, 2, 3] = joint.d
        Ti[:, 3, 3] = 1.0
        T = T @ Ti
        frames[:, i] = T
    frames[:, -1] = frames[:, -1] @ chain.tool_frame
    return frames


def forward_kinematics(chain: KinematicChain, q: np.ndarray) -> Pose:
    """Tool pose for configuration q via composed DH transforms."""
    return Pose.from_matrix(link_frames(chain, q)[-1])


def valid_revolution_offsets(joint: JointModel, angle: float) -> list[int]:
    """Integer ks with limit_lo <= angle + 2*pi*k < limit_hi, ascending."""
    k_lo = math.ceil((joint.limit_lo - angle) / TWO_PI) - 1
    k_hi = math.floor((joint.limit_hi - angle) / TWO_PI) + 1
    return [
        k
        for k in range(k_lo, k_hi + 1)
        if joint.limit_lo <= angle + k * TWO_PI < joint.limit_hi
    ]


def equivalent_configurations(chain: KinematicChain, q: np.ndarray) -> np.ndarray:
    """All in-limit configurations reachable from q by whole joint revolutions.

    Returns a (k, N) array containing q itself; every row places every link
    of the arm identically. Rows follow the per-joint Cartesian product with
    revolution offsets in ascending order.
    """
    q = chain.require_in_limits(q)
    choices = [
        [q[i] + k * TWO_PI for k in valid_revolution_offsets(joint, q[i])]
        for i, joint in enumerate(chain.joints)
    ]
    return np.array(list(product(*choices)))


def max_equivalent_count(chain: KinematicChain) -> int:
    """Largest possible number of equivalent configurations of any position.

    Exact for joints whose span is a whole number of revolutions; otherwise
    the supremum over configurations (per-joint maximum offset counts).
    """
    count = 1
    for joint in chain.joints:
        count *= joint.max_offset_count()
    return count


def config_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Euclidean joint-space distance in radians."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"configuration shapes differ: {a.shape} vs {b.shape}")
    return float(np.linalg.norm(a - b))


def wrap_into_limits(angle: float, lo: float, hi: float) -> float | None:
    """Shift angle by whole revolutions into [lo, hi); None when impossible.

    Returns the smallest admissible representative, built as angle + k*2*pi
    with exact integer k.
    """
    k = math.floor((lo - angle) / TWO_PI)
    for kk in (k, k + 1, k + 2):
        shifted = angle + kk * TWO_PI
        if lo <= shifted < hi:
            return shifted
    return None


def load_chain_preset(name: str) -> KinematicChain:
    """Load a shipped chain preset ("ur5", "ur5-elbow-limited", "ur5-vine")."""
    fname = name.replace("-", "_") + ".json"
    ref = resources.files("redugoal.presets").joinpath(fname)
    try:
        data = json.loads(ref.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise KeyError(f"unknown chain preset {name!r}") from None
    return KinematicChain.from_dict(data)


def load_chain(source: str) -> KinematicChain:
    """Load a chain from a preset name or a JSON file path."""
    try:
        return load_chain_preset(source)
    except KeyError:
        with open(source, encoding="utf-8") as fh:
            return KinematicChain.from_dict(json.load(fh))


def chain_with_tool(chain: KinematicChain, tool_length: float) -> KinematicChain:
    """Same chain with the tool point pushed tool_length along the flange z."""
    offset = np.eye(4)
    offset[2, 3] = tool_length
    return KinematicChain(
        joints=chain.joints,
        base_frame=chain.base_frame,
        tool_frame=chain.tool_frame @ offset,
        name=chain.name,
    )
