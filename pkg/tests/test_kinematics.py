import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from redugoal.kinematics import (
    TWO_PI,
    JointModel,
    KinematicChain,
    LimitError,
    Pose,
    config_distance,
    equivalent_configurations,
    forward_kinematics,
    batch_link_frames,
    link_frames,
    load_chain_preset,
    max_equivalent_count,
    pose_error,
    wrap_into_limits,
)


def planar_chain(n=2, spans=None):
    """n links of unit length rotating in the XY plane."""
    if spans is None:
        spans = [(-TWO_PI, TWO_PI)] * n
    joints = tuple(
        JointModel(a=1.0, alpha=0.0, d=0.0, limit_lo=lo, limit_hi=hi)
        for lo, hi in spans
    )
    return KinematicChain(joints=joints, name="planar")


def brute_force_equivalents(chain, q):
    """Oracle: try every revolution offset in {-2..2} per joint, filter by limits."""
    per_joint = []
    for i, joint in enumerate(chain.joints):
        vals = []
        for k in range(-2, 3):
            cand = q[i] + k * TWO_PI
            if joint.limit_lo <= cand < joint.limit_hi:
                vals.append(cand)
        per_joint.append(sorted(vals))
    out = [[]]
    for vals in per_joint:
        out = [row + [v] for row in out for v in vals]
    return np.array(out)


class TestForwardKinematics:
    def test_planar_straight(self):
        chain = planar_chain()
        pose = forward_kinematics(chain, np.zeros(2))
        np.testing.assert_allclose(pose.position, [2.0, 0.0, 0.0], atol=1e-12)

    def test_planar_quarter_turn(self):
        chain = planar_chain()
        pose = forward_kinematics(chain, np.array([math.pi / 2, 0.0]))
        np.testing.assert_allclose(pose.position, [0.0, 2.0, 0.0], atol=1e-12)

    def test_ur5_zero_config(self):
        # Frozen from an independent composition of primitive rotations and
        # translations (scipy Rotation), not the DH matrix formula.
        chain = load_chain_preset("ur5")
        pose = forward_kinematics(chain, np.zeros(6))
        np.testing.assert_allclose(
            pose.position, [-0.81725, -0.19145, -0.005491], atol=1e-12
        )
        np.testing.assert_allclose(
            np.abs(pose.quaternion),
            [0.7071067811865475, 0.0, 0.0, 0.7071067811865476],
            atol=1e-12,
        )

    def test_ur5_random_config_oracle(self):
        # Same oracle, seeded rng(7) sample.
        chain = load_chain_preset("ur5")
        q = np.array(
            [
                1.5719959955304361,
                4.991535836121987,
                3.4643685566965257,
                -3.4531482927394097,
                -2.5111845250497997,
                4.6942110391202085,
            ]
        )
        pose = forward_kinematics(chain, q)
        np.testing.assert_allclose(
            pose.position,
            [0.04263526629872517, 0.02825343653964553, 0.1008145918491831],
            atol=1e-12,
        )
        expected = Pose(
            position=pose.position,
            quaternion=np.array(
                [0.6756505741499993, -0.5708725780894399, -0.410091421858407, 0.2223192005977949]
            ),
        )
        _, rot = pose_error(pose, expected)
        assert rot < 1e-12

    def test_dimension_mismatch(self):
        chain = planar_chain()
        with pytest.raises(ValueError):
            forward_kinematics(chain, np.zeros(3))


class TestLinkFrames:
    def test_planar_frames(self):
        chain = planar_chain()
        frames = link_frames(chain, np.zeros(2))
        np.testing.assert_allclose(frames[0][:3, 3], [1.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(frames[1][:3, 3], [2.0, 0.0, 0.0], atol=1e-12)

    def test_last_frame_is_fk(self):
        chain = load_chain_preset("ur5")
        rng = np.random.default_rng(0)
        for _ in range(100):
            q = chain.random_configuration(rng)
            frames = link_frames(chain, q)
            pose = forward_kinematics(chain, q)
            np.testing.assert_allclose(frames[-1], pose.matrix(), atol=1e-12)

    def test_ur5_zero_frame_origins(self):
        # Frozen from the same independent oracle as the FK values.
        chain = load_chain_preset("ur5")
        frames = link_frames(chain, np.zeros(6))
        expected = np.array(
            [
                [0.0, 0.0, 0.089159],
                [-0.425, 0.0, 0.089159],
                [-0.81725, 0.0, 0.089159],
                [-0.81725, -0.10915, 0.089159],
                [-0.81725, -0.10915, -0.005491],
                [-0.81725, -0.19145, -0.005491],
            ]
        )
        np.testing.assert_allclose(frames[:, :3, 3], expected, atol=1e-12)

    def test_batch_matches_single(self):
        chain = load_chain_preset("ur5")
        rng = np.random.default_rng(1)
        Q = np.array([chain.random_configuration(rng) for _ in range(50)])
        batch = batch_link_frames(chain, Q)
        for i in range(50):
            np.testing.assert_allclose(batch[i], link_frames(chain, Q[i]), atol=1e-12)


class TestEquivalentConfigurations:
    def test_two_joint_example(self):
        chain = planar_chain(2)
        q = np.array([0.5, -1.0])
        eqs = equivalent_configurations(chain, q)
        expected = {
            (0.5, -1.0),
            (0.5 - TWO_PI, -1.0),
            (0.5, -1.0 + TWO_PI),
            (0.5 - TWO_PI, -1.0 + TWO_PI),
        }
        assert len(eqs) == 4
        assert {tuple(row) for row in eqs} == expected

    def test_single_revolution_spans(self):
        chain = planar_chain(2, spans=[(-math.pi, math.pi)] * 2)
        q = np.array([0.3, -0.7])
        eqs = equivalent_configurations(chain, q)
        assert eqs.shape == (1, 2)
        np.testing.assert_allclose(eqs[0], q)

    def test_ur5_elbow_limited_count(self):
        chain = load_chain_preset("ur5-elbow-limited")
        rng = np.random.default_rng(42)
        for _ in range(20):
            q = chain.random_configuration(rng)
            assert len(equivalent_configurations(chain, q)) == 32

    def test_contains_self_and_closed(self):
        chain = load_chain_preset("ur5")
        rng = np.random.default_rng(3)
        q = chain.random_configuration(rng)
        eqs = equivalent_configurations(chain, q)
        assert any(np.allclose(row, q, atol=0) for row in eqs)
        base = {tuple(row) for row in eqs}
        for row in eqs:
            again = {tuple(r) for r in equivalent_configurations(chain, row)}
            assert again == base

    def test_matches_brute_force(self):
        rng = np.random.default_rng(4)
        for name in ("ur5", "ur5-elbow-limited", "ur5-vine"):
            chain = load_chain_preset(name)
            for _ in range(50):
                q = chain.random_configuration(rng)
                got = {tuple(r) for r in equivalent_configurations(chain, q)}
                want = {tuple(r) for r in brute_force_equivalents(chain, q)}
                assert got == want

    def test_fk_identity(self):
        chain = load_chain_preset("ur5")
        rng = np.random.default_rng(5)
        for _ in range(50):
            q = chain.random_configuration(rng)
            ref = link_frames(chain, q)
            for row in equivalent_configurations(chain, q):
                frames = link_frames(chain, row)
                assert np.max(np.abs(frames[:, :3, 3] - ref[:, :3, 3])) < 1e-9
                assert np.max(np.abs(frames[:, :3, :3] - ref[:, :3, :3])) < 1e-9

    def test_pairwise_separation(self):
        chain = load_chain_preset("ur5")
        rng = np.random.default_rng(6)
        q = chain.random_configuration(rng)
        eqs = equivalent_configurations(chain, q)
        for i in range(len(eqs)):
            for j in range(i + 1, len(eqs)):
                diff = eqs[i] - eqs[j]
                for d in diff:
                    if d != 0.0:
                        k = d / TWO_PI
                        assert abs(k - round(k)) < 1e-12
                        assert round(k) != 0

    def test_out_of_limits_rejected(self):
        chain = planar_chain(1, spans=[(-math.pi, math.pi)])
        with pytest.raises(LimitError):
            equivalent_configurations(chain, np.array([4.0]))


class TestMaxEquivalentCount:
    def test_two_revolution_six_joints(self):
        assert max_equivalent_count(load_chain_preset("ur5")) == 64

    def test_elbow_limited(self):
        assert max_equivalent_count(load_chain_preset("ur5-elbow-limited")) == 32

    def test_vine(self):
        assert max_equivalent_count(load_chain_preset("ur5-vine")) == 16

    def test_single_joint_single_revolution(self):
        chain = planar_chain(1, spans=[(-math.pi, math.pi)])
        assert max_equivalent_count(chain) == 1

    def test_non_multiple_span_supremum(self):
        # Span of 3*pi admits at most two 2*pi-separated angles.
        chain = planar_chain(1, spans=[(0.0, 3 * math.pi)])
        assert max_equivalent_count(chain) == 2
        # ... and indeed some configuration attains it:
        assert len(equivalent_configurations(chain, np.array([0.5]))) == 2
        # while others do not:
        assert len(equivalent_configurations(chain, np.array([3.5]))) == 1


class TestConfigDistance:
    def test_three_four_five(self):
        assert config_distance(np.zeros(2), np.array([3.0, 4.0])) == 5.0

    def test_identity(self):
        q = np.array([0.1, 0.2, 0.3])
        assert config_distance(q, q) == 0.0

    def test_mismatch(self):
        with pytest.raises(ValueError):
            config_distance(np.zeros(2), np.zeros(3))

    @given(
        st.lists(st.floats(-10, 10), min_size=3, max_size=3),
        st.lists(st.floats(-10, 10), min_size=3, max_size=3),
        st.lists(st.floats(-10, 10), min_size=3, max_size=3),
    )
    @settings(max_examples=200, deadline=None)
    def test_metric_properties(self, a, b, c):
        a, b, c = np.array(a), np.array(b), np.array(c)
        assert config_distance(a, b) == pytest.approx(config_distance(b, a))
        assert config_distance(a, c) <= config_distance(a, b) + config_distance(b, c) + 1e-9


class TestWrapIntoLimits:
    def test_wraps_inside(self):
        assert wrap_into_limits(7.0, -math.pi, math.pi) == pytest.approx(7.0 - TWO_PI)

    def test_impossible(self):
        assert wrap_into_limits(math.pi / 2, -math.pi, 0.0) is None

    def test_smallest_representative(self):
        # Span 4*pi admits two representatives; the smaller one is returned.
        got = wrap_into_limits(0.5, -TWO_PI, TWO_PI)
        assert got == pytest.approx(0.5 - TWO_PI)

    @given(st.floats(-20, 20))
    @settings(max_examples=200, deadline=None)
    def test_exact_revolution_shift(self, angle):
        wrapped = wrap_into_limits(angle, -TWO_PI, TWO_PI)
        assert wrapped is not None
        k = (wrapped - angle) / TWO_PI
        assert abs(k - round(k)) < 1e-9


class TestPresets:
    def test_limits(self):
        ur5 = load_chain_preset("ur5")
        assert all(j.limit_lo == -TWO_PI and j.limit_hi == TWO_PI for j in ur5.joints)
        elbow = load_chain_preset("ur5-elbow-limited")
        assert elbow.joints[2].limit_lo == -math.pi
        assert elbow.joints[2].limit_hi == math.pi
        vine = load_chain_preset("ur5-vine")
        assert vine.joints[1].limit_lo == -math.pi
        assert vine.joints[1].limit_hi == 0.0

    def test_roundtrip_dict(self):
        chain = load_chain_preset("ur5-vine")
        again = KinematicChain.from_dict(chain.to_dict())
        assert again.name == chain.name
        np.testing.assert_allclose(again.limits_lo, chain.limits_lo)
        rng = np.random.default_rng(8)
        q = chain.random_configuration(rng)
        np.testing.assert_allclose(
            link_frames(again, q), link_frames(chain, q), atol=1e-15
        )

    def test_unknown_preset(self):
        with pytest.raises(KeyError):
            load_chain_preset("ur99")


class TestJointModel:
    def test_rejects_empty_interval(self):
        with pytest.raises(ValueError):
            JointModel(a=0, alpha=0, d=0, limit_lo=1.0, limit_hi=1.0)

    def test_rejects_wide_span(self):
        with pytest.raises(ValueError):
            JointModel(a=0, alpha=0, d=0, limit_lo=0.0, limit_hi=5 * math.pi)
