import json
import math

import numpy as np
import pytest

from redugoal.collision import (
    CollisionChecker,
    DEFAULT_UR5_LINK_RADII,
    Scene,
    Sphere,
    capsules_for_chain,
    edge_in_collision,
)
from redugoal.ik import GoalSet
from redugoal.kinematics import (
    JointModel,
    KinematicChain,
    config_distance,
    load_chain_preset,
)
from redugoal.neighbors import KDTreeIndex, LinearIndex
from redugoal.planner import (
    PlanResult,
    PlannerConfig,
    StartInCollisionError,
    calibration_iterations_per_ms,
    informed_sample,
    path_length,
    plan,
    shortcut,
)

HOME = np.array([0.0, -math.pi / 2, math.pi / 2, 0.0, 0.0, 0.0])


def planar_chain(n=2):
    joints = tuple(JointModel(a=1.0, alpha=0.0, d=0.0) for _ in range(n))
    return KinematicChain(joints=joints, name="planar")


def goal_set_for(start, goals):
    goals = np.atleast_2d(np.asarray(goals, dtype=float))
    d = np.linalg.norm(goals - start, axis=1)
    order = np.argsort(d, kind="stable")
    return GoalSet(configs=goals[order], start=start, distances=d[order])


def ur5_setup():
    chain = load_chain_preset("ur5-elbow-limited")
    robot = capsules_for_chain(chain, DEFAULT_UR5_LINK_RADII)
    return chain, robot


class TestPathLength:
    def test_single_waypoint(self):
        assert path_length(np.zeros((1, 2))) == 0.0

    def test_three_four_five(self):
        assert path_length(np.array([[0.0, 0.0], [3.0, 4.0]])) == 5.0

    def test_l_shape(self):
        p = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]])
        assert path_length(p) == pytest.approx(2.0)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            path_length(np.zeros((0, 2)))


class TestShortcut:
    def setup_method(self):
        self.chain, self.robot = ur5_setup()
        self.empty = Scene(obstacles=())

    def test_straight_path_unchanged(self):
        p = np.vstack([HOME, HOME + 0.5])
        out = shortcut(p, self.empty, self.robot, self.chain, 50, 0.02, seed=0)
        np.testing.assert_allclose(out, p)

    def test_zigzag_reduced_to_straight(self):
        a = HOME
        b = HOME + np.array([1.0, 1.0, 0.0, 0.0, 0.0, 0.0])
        c = HOME + np.array([2.0, 0.0, 0.0, 0.0, 0.0, 0.0])
        out = shortcut(np.vstack([a, b, c]), self.empty, self.robot, self.chain, 50, 0.05, seed=1)
        assert path_length(out) == pytest.approx(2.0, rel=1e-9)
        np.testing.assert_allclose(out[0], a)
        np.testing.assert_allclose(out[-1], c)

    def test_never_longer_random_paths(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            m = int(rng.integers(2, 6))
            path = HOME + rng.uniform(-0.8, 0.8, (m, 6))
            out = shortcut(path, self.empty, self.robot, self.chain, 10, 0.1, seed=3)
            assert path_length(out) <= path_length(path) + 1e-12
            np.testing.assert_allclose(out[0], path[0])
            np.testing.assert_allclose(out[-1], path[-1])

    def test_respects_obstacles(self):
        chain = planar_chain()
        robot = capsules_for_chain(chain, [0.02, 0.02])
        scene = Scene(obstacles=(Sphere(center=[1.45, 1.45, 0.0], radius=0.12),))
        # detour around the blocked quarter-turn sweep
        p = np.array([[0.0, 0.0], [math.pi / 4, 2.5], [math.pi / 2, 0.0]])
        out = shortcut(p, scene, robot, chain, 200, 0.02, seed=4)
        assert path_length(out) <= path_length(p)
        checker = CollisionChecker(scene, robot, chain)
        for i in range(len(out) - 1):
            assert not checker.edge_in_collision(out[i], out[i + 1], 0.02)

    def test_short_inputs_no_op(self):
        p = HOME[None]
        out = shortcut(p, self.empty, self.robot, self.chain, 10, 0.1)
        np.testing.assert_allclose(out, p)


class TestInformedSample:
    def test_membership_2d(self):
        chain = planar_chain(2)
        start = np.zeros(2)
        goal = np.array([4.0, 0.0])
        gs = goal_set_for(start, goal[None])
        rng = np.random.default_rng(5)
        for _ in range(10000):
            x = informed_sample(chain, start, gs, 5.0, rng)
            total = np.linalg.norm(x - start) + np.linalg.norm(x - goal)
            assert total <= 5.0 + 1e-9
            assert chain.in_limits(x)

    def test_infinite_cost_uniform(self):
        chain = planar_chain(2)
        start = np.zeros(2)
        gs = goal_set_for(start, np.array([[1.0, 1.0]]))
        rng = np.random.default_rng(6)
        samples = np.array(
            [informed_sample(chain, start, gs, math.inf, rng) for _ in range(2000)]
        )
        assert np.all(samples >= chain.limits_lo) and np.all(samples < chain.limits_hi)
        # spread across the limits box rather than the narrow ellipsoid
        assert np.std(samples[:, 0]) > 1.0

    def test_no_admissible_goal_uniform(self):
        chain = planar_chain(2)
        start = np.zeros(2)
        gs = goal_set_for(start, np.array([[4.0, 0.0]]))
        rng = np.random.default_rng(7)
        x = informed_sample(chain, start, gs, 1.0, rng)
        assert chain.in_limits(x)

    def test_union_of_ellipsoids(self):
        chain = planar_chain(2)
        start = np.zeros(2)
        goals = np.array([[2.0, 0.0], [0.0, 2.0]])
        gs = goal_set_for(start, goals)
        rng = np.random.default_rng(8)
        best = 2.5
        for _ in range(2000):
            x = informed_sample(chain, start, gs, best, rng)
            ok = any(
                np.linalg.norm(x - start) + np.linalg.norm(x - g) <= best + 1e-9
                for g in goals
            )
            assert ok


class TestNeighbors:
    def test_kdtree_matches_linear(self):
        rng = np.random.default_rng(9)
        lin = LinearIndex(4)
        kd = KDTreeIndex(4)
        pts = rng.uniform(-3, 3, (500, 4))
        for p in pts:
            lin.add(p)
            kd.add(p)
        for _ in range(200):
            q = rng.uniform(-3.5, 3.5, 4)
            li, ld = lin.nearest(q)
            ki, kdist = kd.nearest(q)
            assert ld == pytest.approx(kdist, abs=1e-12)

    def test_empty_index_raises(self):
        with pytest.raises(ValueError):
            LinearIndex(3).nearest(np.zeros(3))
        with pytest.raises(ValueError):
            KDTreeIndex(3).nearest(np.zeros(3))


class TestPlanFreeSpace:
    def setup_method(self):
        self.chain, self.robot = ur5_setup()
        self.empty = Scene(obstacles=())

    def test_single_goal_near_optimal(self):
        goal = HOME + np.array([1.2, 0.4, -0.6, 0.9, 0.5, -0.3])
        gs = goal_set_for(HOME, goal[None])
        res = plan(self.empty, self.robot, self.chain, HOME, gs,
                   PlannerConfig(time_budget_ms=1000, seed=10))
        assert res.success
        assert res.length <= 1.01 * config_distance(HOME, goal)
        np.testing.assert_allclose(res.path[0], HOME)
        np.testing.assert_allclose(res.path[-1], goal)

    def test_multi_goal_picks_closest(self):
        rng = np.random.default_rng(11)
        goals = HOME + rng.uniform(-1.5, 1.5, (12, 6))
        gs = goal_set_for(HOME, goals)
        res = plan(self.empty, self.robot, self.chain, HOME, gs,
                   PlannerConfig(time_budget_ms=1000, seed=12))
        assert res.success
        assert res.length <= 1.01 * gs.distances[0]
        assert res.goal_rank == 1

    def test_start_equals_goal(self):
        goals = np.vstack([HOME + 0.7, HOME])
        gs = goal_set_for(HOME, goals)
        res = plan(self.empty, self.robot, self.chain, HOME, gs,
                   PlannerConfig(time_budget_ms=100, seed=13))
        assert res.success
        assert res.length == 0.0
        assert len(res.path) == 1
        assert res.goal_rank == 1
        assert res.trace[-1][1] == 0.0


class TestPlanObstacles:
    def setup_method(self):
        self.chain = planar_chain()
        self.robot = capsules_for_chain(self.chain, [0.02, 0.02])

    def test_detour_found_and_valid(self):
        # sphere blocks the tip sweep between start and the single goal
        scene = Scene(obstacles=(Sphere(center=[1.45, 1.45, 0.0], radius=0.12),))
        start = np.zeros(2)
        goal = np.array([math.pi / 2, 0.0])
        gs = goal_set_for(start, goal[None])
        cfg = PlannerConfig(time_budget_ms=2000, seed=14)
        res = plan(scene, self.robot, self.chain, start, gs, cfg)
        assert res.success
        assert res.length > config_distance(start, goal)  # forced detour
        np.testing.assert_allclose(res.path[0], start)
        np.testing.assert_allclose(res.path[-1], goal)
        for i in range(len(res.path) - 1):
            assert not edge_in_collision(
                scene, self.robot, self.chain, res.path[i], res.path[i + 1],
                cfg.edge_check_step,
            )

    def test_multi_goal_prefers_unblocked(self):
        # closest goal's approach is blocked; a farther goal is free
        scene = Scene(obstacles=(Sphere(center=[1.45, 1.45, 0.0], radius=0.3),))
        start = np.zeros(2)
        goals = np.array([[math.pi / 2, 0.0], [-math.pi / 2, 0.0]])
        gs = goal_set_for(start, goals)
        res = plan(scene, self.robot, self.chain, start, gs,
                   PlannerConfig(time_budget_ms=2000, seed=15))
        assert res.success
        # blocked-direction goal still reachable the long way; whichever goal
        # wins, the reported rank must match the set's ranking of the endpoint
        assert res.goal_rank == gs.rank_of(res.path[-1])

    def test_no_free_goal_fails(self):
        scene = Scene(obstacles=(Sphere(center=[2.0, 0.0, 0.0], radius=0.5),))
        start = np.array([math.pi / 2, 0.0])
        goals = np.array([[0.0, 0.0], [0.05, 0.0]])  # both tips inside sphere
        gs = goal_set_for(start, goals)
        res = plan(scene, self.robot, self.chain, start, gs,
                   PlannerConfig(time_budget_ms=100, seed=16))
        assert not res.success
        assert res.goal_rank == 0
        assert res.trace == []

    def test_start_in_collision_raises(self):
        scene = Scene(obstacles=(Sphere(center=[2.0, 0.0, 0.0], radius=0.5),))
        gs = goal_set_for(np.zeros(2), np.array([[1.0, 1.0]]))
        with pytest.raises(StartInCollisionError):
            plan(scene, self.robot, self.chain, np.zeros(2), gs,
                 PlannerConfig(time_budget_ms=100, seed=17))

    def test_empty_goalset_raises(self):
        gs = GoalSet(configs=np.zeros((0, 2)), start=np.zeros(2), distances=np.zeros(0))
        with pytest.raises(ValueError):
            plan(Scene(obstacles=()), self.robot, self.chain, np.zeros(2), gs,
                 PlannerConfig(time_budget_ms=100, seed=18))


class TestPlanContracts:
    def setup_method(self):
        self.chain = planar_chain()
        self.robot = capsules_for_chain(self.chain, [0.02, 0.02])
        self.scene = Scene(obstacles=(Sphere(center=[1.45, 1.45, 0.0], radius=0.12),))

    def _run(self, seed=19, budget=1500.0, **kw):
        start = np.zeros(2)
        rng = np.random.default_rng(100)
        goals = rng.uniform(-2.5, 2.5, (6, 2))
        gs = goal_set_for(start, goals)
        cfg = PlannerConfig(time_budget_ms=budget, seed=seed, **kw)
        return plan(self.scene, self.robot, self.chain, start, gs, cfg), gs, cfg

    def test_trace_non_increasing_and_final_matches(self):
        res, _, _ = self._run()
        assert res.success
        costs = [c for _, c, _ in res.trace]
        assert all(a >= b for a, b in zip(costs, costs[1:]))
        assert res.trace[-1][1] == res.length
        times = [t for t, _, _ in res.trace]
        assert all(a <= b for a, b in zip(times, times[1:]))

    def test_length_is_recomputed_metric(self):
        res, _, _ = self._run()
        assert res.length == pytest.approx(path_length(res.path), abs=1e-9)

    def test_rank_bookkeeping(self):
        res, gs, _ = self._run()
        assert res.goal_rank == gs.rank_of(res.path[-1])

    def test_waypoints_within_limits(self):
        res, _, _ = self._run()
        for w in res.path:
            assert self.chain.in_limits(w)

    def test_bit_for_bit_determinism(self):
        res1, _, _ = self._run(seed=20)
        res2, _, _ = self._run(seed=20)
        assert np.array_equal(res1.path, res2.path)
        assert res1.trace == res2.trace
        assert res1.length == res2.length

    def test_trace_resolution_compression(self):
        res, _, _ = self._run(seed=22, trace_resolution_ms=200.0)
        times = [t for t, _, _ in res.trace]
        assert all(b - a >= 200.0 for a, b in zip(times[:-1], times[1:-1]))
        assert res.trace[-1][1] == res.length

    def test_result_roundtrip_json(self):
        res, _, _ = self._run(seed=23)
        blob = json.dumps(res.to_dict())
        again = PlanResult.from_dict(json.loads(blob))
        np.testing.assert_allclose(again.path, res.path)
        assert again.trace == res.trace
        assert again.calibration == res.calibration


class TestCalibration:
    def test_env_override(self, monkeypatch):
        monkeypatch.setenv("REDUGOAL_CALIBRATION", "2.5")
        assert calibration_iterations_per_ms() == 2.5

    def test_default(self, monkeypatch):
        monkeypatch.delenv("REDUGOAL_CALIBRATION", raising=False)
        assert calibration_iterations_per_ms() == 1.0

    def test_invalid_rejected(self, monkeypatch):
        monkeypatch.setenv("REDUGOAL_CALIBRATION", "-1")
        with pytest.raises(ValueError):
            calibration_iterations_per_ms()

    def test_iterations_recorded(self):
        chain = planar_chain()
        robot = capsules_for_chain(chain, [0.02, 0.02])
        gs = goal_set_for(np.zeros(2), np.array([[1.0, 0.0]]))
        cfg = PlannerConfig(time_budget_ms=100, seed=0, iterations_per_ms=2.0)
        res = plan(Scene(obstacles=()), robot, chain, np.zeros(2), gs, cfg)
        assert res.calibration == 2.0
        assert res.iterations == 200

    def test_config_validation(self):
        with pytest.raises(ValueError):
            PlannerConfig(time_budget_ms=0)
        with pytest.raises(ValueError):
            PlannerConfig(extend_step=-0.1)
