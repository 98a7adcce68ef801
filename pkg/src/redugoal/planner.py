"""Multi-goal anytime bidirectional planner with integrated shortcutting.

A start tree and a goal forest (rooted at every goal configuration at once)
alternately extend toward samples and greedily connect to each other. Every
accepted improvement is shortcut and traced; once an incumbent exists,
sampling narrows to the union of the goals' prolate hyperspheroids.

The budget is an iteration count derived from the millisecond budget through
a fixed iterations-per-millisecond calibration constant, so runs are exactly
reproducible; wall-clock time is reported but never steers the search.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field

import numpy as np

from .collision import CollisionChecker, RobotGeometry, Scene, edge_samples
from .ik import GoalSet, analytic_ik_6r
from .kinematics import KinematicChain, Pose, config_distance
from .neighbors import LinearIndex
from .timing import JointDynamics, execution_time

DEFAULT_ITERATIONS_PER_MS = 1.0
CALIBRATION_ENV_VAR = "REDUGOAL_CALIBRATION"


def calibration_iterations_per_ms() -> float:
    """Iterations-per-millisecond constant, overridable via REDUGOAL_CALIBRATION."""
    raw = os.environ.get(CALIBRATION_ENV_VAR)
    if raw is None:
        return DEFAULT_ITERATIONS_PER_MS
    value = float(raw)
    if value <= 0:
        raise ValueError(f"{CALIBRATION_ENV_VAR} must be positive, got {raw!r}")
    return value


class StartInCollisionError(ValueError):
    """The start configuration violates the scene."""


@dataclass(frozen=True)
class PlannerConfig:
    time_budget_ms: float = 2000.0
    extend_step: float = 0.2
    edge_check_step: float = 0.02
    seed: int = 0
    shortcut_attempts_per_round: int = 40
    informed_sampling: bool = True
    trace_resolution_ms: float = 0.0
    iterations_per_ms: float | None = None

    def __post_init__(self) -> None:
        if self.time_budget_ms <= 0:
            raise ValueError("time_budget_ms must be positive")
        if self.extend_step <= 0 or self.edge_check_step <= 0:
            raise ValueError("steps must be positive")


@dataclass
class PlanResult:
    """Best path found plus the anytime improvement trace.

    trace entries are (modeled elapsed ms, best length, goal rank); length is
    the joint-space metric of path and exec_time its modeled traversal time.
    """

    path: np.ndarray
    length: float
    exec_time: float
    goal_rank: int
    trace: list[tuple[float, float, int]]
    success: bool
    seed: int = 0
    calibration: float = DEFAULT_ITERATIONS_PER_MS
    iterations: int = 0
    wall_time_s: float = 0.0

    def to_dict(self) -> dict:
        return {
            "waypoints": np.asarray(self.path).tolist(),
            "length": None if math.isinf(self.length) else self.length,
            "exec_time": None if math.isinf(self.exec_time) else self.exec_time,
            "goal_rank": self.goal_rank,
            "trace": [[t, c, r] for t, c, r in self.trace],
            "success": self.success,
            "seed": self.seed,
            "calibration": self.calibration,
            "iterations": self.iterations,
            "wall_time_s": self.wall_time_s,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PlanResult":
        return cls(
            path=np.asarray(data["waypoints"], dtype=float),
            length=math.inf if data["length"] is None else data["length"],
            exec_time=math.inf if data["exec_time"] is None else data["exec_time"],
            goal_rank=data["goal_rank"],
            trace=[(t, c, int(r)) for t, c, r in data["trace"]],
            success=data["success"],
            seed=data.get("seed", 0),
            calibration=data.get("calibration", DEFAULT_ITERATIONS_PER_MS),
            iterations=data.get("iterations", 0),
            wall_time_s=data.get("wall_time_s", 0.0),
        )


def path_length(path: np.ndarray) -> float:
    """Sum of Euclidean segment lengths, in radians."""
    path = np.asarray(path, dtype=float)
    if path.ndim != 2 or len(path) < 1:
        raise ValueError("path must be a non-empty (m, N) array")
    if len(path) == 1:
        return 0.0
    return float(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1)))


# ---------------------------------------------------------------------------
# informed sampling


class _InformedSampler:
    """Samples the union of per-goal prolate hyperspheroids."""

    def __init__(self, chain: KinematicChain, start: np.ndarray, goals: np.ndarray):
        self._lo = chain.limits_lo
        self._hi = chain.limits_hi
        self._start = np.asarray(start, dtype=float)
        self._goals = np.asarray(goals, dtype=float)
        self._c_min = np.linalg.norm(self._goals - self._start, axis=1)
        self._centers = 0.5 * (self._goals + self._start)
        self._rotations: dict[int, np.ndarray] = {}
        self._dim = len(self._start)

    def _rotation(self, gi: int) -> np.ndarray:
        C = self._rotations.get(gi)
        if C is None:
            c_min = self._c_min[gi]
            if c_min < 1e-12:
                C = np.eye(self._dim)
            else:
                a1 = ((self._goals[gi] - self._start) / c_min)[:, None]
                e1 = np.zeros((1, self._dim))
                e1[0, 0] = 1.0
                U, _, Vt = np.linalg.svd(a1 @ e1)
                diag = np.ones(self._dim)
                diag[-1] = np.linalg.det(U) * np.linalg.det(Vt.T)
                C = U @ np.diag(diag) @ Vt
            self._rotations[gi] = C
        return C

    def sample(self, best_cost: float, rng: np.random.Generator) -> np.ndarray:
        if not math.isfinite(best_cost):
            return rng.uniform(self._lo, self._hi)
        admissible = np.nonzero(self._c_min <= best_cost)[0]
        if len(admissible) == 0:
            return rng.uniform(self._lo, self._hi)
        gi = int(admissible[rng.integers(len(admissible))])
        c_min = self._c_min[gi]
        r1 = best_cost / 2.0
        r_other = math.sqrt(max(best_cost * best_cost - c_min * c_min, 0.0)) / 2.0
        radii = np.full(self._dim, r_other)
        radii[0] = r1
        C = self._rotation(gi)
        for _ in range(64):
            ball = rng.normal(size=self._dim)
            norm = np.linalg.norm(ball)
            if norm < 1e-12:
                continue
            ball *= rng.uniform() ** (1.0 / self._dim) / norm
            x = C @ (radii * ball) + self._centers[gi]
            if np.all(self._lo <= x) and np.all(x < self._hi):
                return x
        # the segment between the foci is always admissible and in limits
        u = rng.uniform()
        return self._start + u * (self._goals[gi] - self._start)


def informed_sample(
    chain: KinematicChain,
    start: np.ndarray,
    goals: GoalSet,
    best_cost: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """One configuration that could lie on a path shorter than best_cost.

    Draws from the union over admissible goals g (those with
    |start - g| <= best_cost) of {x : |x - start| + |x - g| <= best_cost},
    rejected against joint limits; falls back to a uniform in-limits sample
    when best_cost is infinite or no goal is admissible.
    """
    sampler = _InformedSampler(chain, start, goals.configs)
    return sampler.sample(best_cost, rng)


# ---------------------------------------------------------------------------
# search trees


class _Tree:
    def __init__(self, dim: int):
        self._index = LinearIndex(dim)
        self._parents: list[int] = []
        self._roots: list[int] = []
        self._by_root: dict[int, list[int]] = {}

    def add_root(self, q: np.ndarray, root_id: int) -> int:
        idx = self._index.add(q)
        self._parents.append(-1)
        self._roots.append(root_id)
        self._by_root.setdefault(root_id, []).append(idx)
        return idx

    def add(self, q: np.ndarray, parent: int) -> int:
        idx = self._index.add(q)
        self._parents.append(parent)
        root_id = self._roots[parent]
        self._roots.append(root_id)
        self._by_root[root_id].append(idx)
        return idx

    def nearest(self, q: np.ndarray) -> tuple[int, float]:
        return self._index.nearest(q)

    def nearest_in_root(self, q: np.ndarray, root_id: int) -> tuple[int, float]:
        """Nearest node restricted to one root's subtree."""
        ids = self._by_root[root_id]
        diff = self._index.configs(ids) - q
        d2 = np.einsum("ij,ij->i", diff, diff)
        k = int(np.argmin(d2))
        return ids[k], float(np.sqrt(d2[k]))

    def config(self, idx: int) -> np.ndarray:
        return self._index.config(idx)

    def root_id(self, idx: int) -> int:
        return self._roots[idx]

    def branch(self, idx: int) -> list[np.ndarray]:
        """Configurations from the root to idx, inclusive."""
        out = []
        while idx >= 0:
            out.append(self._index.config(idx))
            idx = self._parents[idx]
        out.reverse()
        return out


# ---------------------------------------------------------------------------
# shortcutting


def _prune_duplicates(path: np.ndarray) -> np.ndarray:
    keep = [0]
    for i in range(1, len(path)):
        if np.max(np.abs(path[i] - path[keep[-1]])) > 0.0:
            keep.append(i)
    return path[keep]


def _locate(path: np.ndarray, cum: np.ndarray, u: float) -> tuple[int, np.ndarray]:
    """Segment index and interpolated configuration at arc length u."""
    i = int(np.searchsorted(cum, u, side="right") - 1)
    i = min(max(i, 0), len(path) - 2)
    seg = cum[i + 1] - cum[i]
    t = 0.0 if seg <= 0 else (u - cum[i]) / seg
    return i, path[i] + t * (path[i + 1] - path[i])


def _shortcut(
    path: np.ndarray,
    checker: CollisionChecker,
    attempts: int,
    step: float,
    rng: np.random.Generator,
) -> np.ndarray:
    path = _prune_duplicates(np.asarray(path, dtype=float))
    if len(path) < 2:
        return path
    for attempt in range(attempts):
        seg_lens = np.linalg.norm(np.diff(path, axis=0), axis=1)
        cum = np.concatenate([[0.0], np.cumsum(seg_lens)])
        total = cum[-1]
        if total <= 1e-12:
            break
        if attempt == 0:
            u1, u2 = 0.0, total  # try the straight line first
        else:
            u1, u2 = sorted(rng.uniform(0.0, total, 2))
        i1, qa = _locate(path, cum, u1)
        i2, qb = _locate(path, cum, u2)
        direct = config_distance(qa, qb)
        if direct >= (u2 - u1) - 1e-12:
            continue
        if checker.edge_in_collision(qa, qb, step):
            continue
        path = _prune_duplicates(
            np.vstack([path[: i1 + 1], qa[None], qb[None], path[i2 + 1 :]])
        )
    return path


def shortcut(
    path: np.ndarray,
    scene: Scene,
    robot: RobotGeometry,
    chain: KinematicChain,
    attempts: int,
    step: float,
    seed: int = 0,
) -> np.ndarray:
    """Randomized path shortening: endpoints fixed, length never increases.

    Repeatedly samples two points along the path and replaces the portion
    between them with a straight segment whenever that is both shorter and
    collision-free at the given resolution.
    """
    checker = CollisionChecker(scene, robot, chain)
    return _shortcut(path, checker, attempts, step, np.random.default_rng(seed))


# ---------------------------------------------------------------------------
# retraction guides


def _wrap_near(q: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Shift each joint of q by whole revolutions to the copy nearest anchor."""
    return anchor + (q - anchor + math.pi) % (2.0 * math.pi) - math.pi


RETREAT_DISTANCES = (0.05, 0.10, 0.15, 0.20, 0.25)


def retreat_guides(
    chain: KinematicChain,
    goals: GoalSet,
    checker: CollisionChecker,
    step: float,
    distances: tuple[float, ...] = RETREAT_DISTANCES,
) -> list[np.ndarray]:
    """Straight tool-retraction ladders out of each goal's pocket.

    For every goal configuration, the task pose is backed off along its own
    approach (tool z) axis in increments; each backed-off pose is solved by
    the closed-form solver and continued joint-wise onto the goal's sheet of
    the configuration space. Ladders are truncated at the first invalid edge
    and returned as paths starting at the goal configuration. Targets whose
    pose bookkeeping is missing are skipped.
    """
    if len(goals) == 0 or len(goals.task_poses) == 0:
        return []
    # closed-form solutions per (task pose, retreat distance), shared by all
    # equivalent goal configurations of that pose
    sols_cache: dict[tuple[int, int], list[np.ndarray]] = {}
    for pid, pose in enumerate(goals.task_poses):
        T = pose.matrix()
        approach = T[:3, 2]
        for di, delta in enumerate(distances):
            back = Pose.from_matrix(
                np.block(
                    [
                        [T[:3, :3], (T[:3, 3] - delta * approach)[:, None]],
                        [np.zeros((1, 3)), np.ones((1, 1))],
                    ]
                )
            )
            sols_cache[(pid, di)] = analytic_ik_6r(chain, back)

    guides = []
    for g, pid in zip(goals.configs, goals.pose_index):
        rungs = [g]
        prev = g
        for di in range(len(distances)):
            sols = sols_cache[(int(pid), di)]
            if not sols:
                break
            cands = [_wrap_near(s, prev) for s in sols]
            dists = [config_distance(c, prev) for c in cands]
            best = int(np.argmin(dists))
            # a large jump means the solver switched branches: stop the ladder
            if dists[best] > 0.8 or not chain.in_limits(cands[best]):
                break
            rungs.append(cands[best])
            prev = cands[best]
        # keep the collision-valid prefix
        valid = [rungs[0]]
        for nxt in rungs[1:]:
            if checker.edge_in_collision(valid[-1], nxt, step):
                break
            valid.append(nxt)
        if len(valid) >= 2:
            guides.append(np.asarray(valid))
    return guides


# ---------------------------------------------------------------------------
# the planner


def _connect(
    tree: _Tree,
    q_target: np.ndarray,
    checker: CollisionChecker,
    extend_step: float,
    edge_check_step: float,
) -> int | None:
    """Greedily grow tree straight toward q_target; node index on arrival."""
    nn_idx, dist = tree.nearest(q_target)
    if dist < 1e-12:
        return nn_idx
    q_near = tree.config(nn_idx).copy()
    samples = edge_samples(q_near, q_target, edge_check_step)
    first_hit = checker.first_collision(samples[1:])
    n_free = len(samples) - 1 if first_hit < 0 else first_hit
    if n_free <= 0:
        return None
    reached = first_hit < 0
    # nodes at extend_step boundaries along the validated prefix
    h = dist / (len(samples) - 1)
    stride = max(1, int(extend_step / h))
    last_sample = len(samples) - 1
    cur = nn_idx
    last = 0
    for i in range(stride, n_free + 1, stride):
        # land exactly on the target configuration, not its interpolant
        q_i = q_target if reached and i == last_sample else samples[i]
        cur = tree.add(q_i, cur)
        last = i
    if reached:
        if last != last_sample:
            cur = tree.add(q_target, cur)
        return cur
    if last < n_free:
        # keep the frontier: the last free sample aids narrow passages
        tree.add(samples[n_free], cur)
    return None


def _extend(
    tree: _Tree,
    q_rand: np.ndarray,
    checker: CollisionChecker,
    extend_step: float,
    edge_check_step: float,
    nn: tuple[int, float] | None = None,
) -> int | None:
    nn_idx, dist = tree.nearest(q_rand) if nn is None else nn
    if dist < 1e-12:
        return None
    q_near = tree.config(nn_idx).copy()
    if dist <= extend_step:
        q_new = q_rand
    else:
        q_new = q_near + (extend_step / dist) * (q_rand - q_near)
    samples = edge_samples(q_near, q_new, edge_check_step)
    first_hit = checker.first_collision(samples[1:])
    if first_hit < 0:
        return tree.add(q_new, nn_idx)
    if first_hit > 0:
        # partial extension up to the last free sample
        return tree.add(samples[first_hit], nn_idx)
    return None


def _graft_guide(
    tree: _Tree,
    anchor_idx: int,
    guide: np.ndarray,
    chain: KinematicChain,
    checker: CollisionChecker,
    step: float,
) -> None:
    cur = anchor_idx
    prev = tree.config(cur)
    for rung in np.asarray(guide, dtype=float)[1:]:
        if not chain.in_limits(rung) or checker.edge_in_collision(prev, rung, step):
            break
        cur = tree.add(rung, cur)
        prev = rung


def plan(
    scene: Scene,
    robot: RobotGeometry,
    chain: KinematicChain,
    start: np.ndarray,
    goals: GoalSet,
    cfg: PlannerConfig,
    dyn: JointDynamics | None = None,
    start_guides: list[np.ndarray] | None = None,
    goal_guides: list[np.ndarray] | None = None,
) -> PlanResult:
    """Anytime multi-goal search from start to the best-reachable goal.

    All goal configurations root the goal forest from the first iteration.
    Optional guide paths anchored at the start (or at a goal configuration)
    are validated and grafted into the matching tree before the search, which
    pays off when endpoints sit in tight pockets (see retreat_guides).
    Returns a failure result (success=False) when no collision-free goal
    exists or the budget runs out without a connection; raises when the start
    itself is invalid.
    """
    start = chain.require_in_limits(np.asarray(start, dtype=float))
    if len(goals) == 0:
        raise ValueError("goal set is empty")
    if np.max(np.abs(goals.start - start)) > 1e-12:
        goals = goals.rerank(start)
    checker = CollisionChecker(scene, robot, chain)
    if checker.config_in_collision(start):
        raise StartInCollisionError("start configuration is in collision")

    iters_per_ms = (
        cfg.iterations_per_ms
        if cfg.iterations_per_ms is not None
        else calibration_iterations_per_ms()
    )
    n_iters = max(1, int(round(cfg.time_budget_ms * iters_per_ms)))
    if dyn is None:
        n = chain.n_joints
        dyn = JointDynamics(v_max=[math.pi] * n, a_max=[2.0 * math.pi] * n)
    rng = np.random.default_rng(cfg.seed)
    t_start = time.perf_counter()

    def result(path, length, rank, trace, success):
        path = np.asarray(path, dtype=float)
        return PlanResult(
            path=path,
            length=float(length),
            exec_time=execution_time(path, dyn) if success else math.inf,
            goal_rank=rank,
            trace=_compress_trace(trace, cfg.trace_resolution_ms),
            success=success,
            seed=cfg.seed,
            calibration=iters_per_ms,
            iterations=n_iters,
            wall_time_s=time.perf_counter() - t_start,
        )

    # trivial identity: the start already sits on a goal
    exact = np.nonzero(np.max(np.abs(goals.configs - start), axis=1) == 0.0)[0]
    if len(exact):
        rank = int(exact[0]) + 1
        return result(start[None], 0.0, rank, [(0.0, 0.0, rank)], True)

    free_mask = ~checker.configs_in_collision(goals.configs)
    free_ids = np.nonzero(free_mask)[0]
    if len(free_ids) == 0:
        return result(start[None], math.inf, 0, [], False)

    dim = chain.n_joints
    start_tree = _Tree(dim)
    start_root = start_tree.add_root(start, 0)
    goal_tree = _Tree(dim)
    root_node_of: dict[tuple, int] = {}
    for gi in free_ids:
        node = goal_tree.add_root(goals.configs[gi], int(gi))
        root_node_of[tuple(np.round(goals.configs[gi], 12))] = node

    for guide in goal_guides or []:
        anchor = root_node_of.get(tuple(np.round(np.asarray(guide)[0], 12)))
        if anchor is not None:
            _graft_guide(goal_tree, anchor, guide, chain, checker, cfg.edge_check_step)
    for guide in start_guides or []:
        if np.max(np.abs(np.asarray(guide)[0] - start)) < 1e-9:
            _graft_guide(
                start_tree, start_root, guide, chain, checker, cfg.edge_check_step
            )

    sampler = _InformedSampler(chain, start, goals.configs[free_ids])
    best_path: np.ndarray | None = None
    best_cost = math.inf
    best_rank = 0
    best_raw: dict[int, float] = {}  # per goal root: best unshortcut connection
    trace: list[tuple[float, float, int]] = []

    # goal-side growth concentrates on the subtrees of near roots, so the
    # nearby equivalents get their passages explored instead of diluting the
    # extension budget over every distant copy
    free_dists = np.maximum(goals.distances[free_ids], 1e-6)
    root_weights = 1.0 / (free_dists * free_dists)
    root_weights /= root_weights.sum()

    def adopt(path_arr, it):
        """Shortcut a candidate connection, keep it only if it beats the incumbent."""
        nonlocal best_path, best_cost, best_rank
        cand = _shortcut(
            path_arr, checker, cfg.shortcut_attempts_per_round, cfg.edge_check_step, rng
        )
        cost = path_length(cand)
        if cost < best_cost:
            best_path = cand
            best_cost = float(cost)
            best_rank = int(goals.rank_of(cand[-1]))
            trace.append((it / iters_per_ms, best_cost, best_rank))

    # seed with straight connections, nearest goals first
    for gi in free_ids:
        d = goals.distances[gi]
        if d >= best_cost:
            break
        g = goals.configs[gi]
        if not checker.edge_in_collision(start, g, cfg.edge_check_step):
            best_path = np.vstack([start, g])
            best_cost = float(d)
            best_rank = int(gi) + 1
            best_raw[int(gi)] = best_cost
            trace.append((0.0, best_cost, best_rank))

    for it in range(1, n_iters + 1):
        grow_start = it % 2 == 1
        tree_a, tree_b = (start_tree, goal_tree) if grow_start else (goal_tree, start_tree)

        if cfg.informed_sampling and math.isfinite(best_cost):
            q_rand = sampler.sample(best_cost, rng)
        else:
            q_rand = rng.uniform(chain.limits_lo, chain.limits_hi)

        nn = None
        if not grow_start and rng.uniform() < 0.75:
            # focused diffusion: grow the subtree of a near goal root so its
            # pocket gets explored instead of diluting over distant copies
            if rng.uniform() < 0.6:
                gi = int(free_ids[0])
            else:
                gi = int(free_ids[rng.choice(len(free_ids), p=root_weights)])
            nn = tree_a.nearest_in_root(q_rand, gi)
        new_idx = _extend(
            tree_a, q_rand, checker, cfg.extend_step, cfg.edge_check_step, nn=nn
        )
        if new_idx is None:
            continue
        reached = _connect(
            tree_b, tree_a.config(new_idx), checker, cfg.extend_step, cfg.edge_check_step
        )
        if reached is None:
            continue
        if grow_start:
            start_branch = start_tree.branch(new_idx)
            goal_branch = goal_tree.branch(reached)
            root = goal_tree.root_id(reached)
        else:
            start_branch = start_tree.branch(reached)
            goal_branch = goal_tree.branch(new_idx)
            root = goal_tree.root_id(new_idx)
        candidate = np.vstack([np.asarray(start_branch), np.asarray(goal_branch)[::-1][1:]])
        raw = path_length(candidate)
        # spend shortcut effort only on connections that improve their goal's
        # best raw cost; adoption itself is cost-checked inside adopt()
        if raw < best_raw.get(root, math.inf):
            best_raw[root] = raw
            adopt(candidate, it)

    if best_path is None:
        return result(start[None], math.inf, 0, [], False)

    # final polish round on the incumbent before reporting
    polished = _shortcut(
        best_path, checker, cfg.shortcut_attempts_per_round, cfg.edge_check_step, rng
    )
    cost = path_length(polished)
    if cost < best_cost:
        best_path = polished
        best_cost = float(cost)
        trace.append((n_iters / iters_per_ms, best_cost, best_rank))
    return result(best_path, best_cost, best_rank, trace, True)


def _compress_trace(
    trace: list[tuple[float, float, int]], resolution_ms: float
) -> list[tuple[float, float, int]]:
    if resolution_ms <= 0 or len(trace) <= 1:
        return list(trace)
    kept = [trace[0]]
    for entry in trace[1:-1]:
        if entry[0] - kept[-1][0] >= resolution_ms:
            kept.append(entry)
    kept.append(trace[-1])
    return kept
