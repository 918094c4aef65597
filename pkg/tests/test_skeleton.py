import numpy as np
import pytest

from capfields.skeleton import (
    THETA_DIM,
    SkeletonPose,
    bone_weights,
    default_humanoid,
    forward_kinematics,
    lbs_batch,
    skeleton_lbs,
    skinning_transforms,
)


class TestRig:
    def test_rig_shape(self):
        s = default_humanoid()
        assert s.n_joints == 24
        assert THETA_DIM == 72
        pos = s.rest_joint_positions()
        assert pos[0][1] == pytest.approx(1.0)
        # head above pelvis, feet near the ground
        assert pos[15][1] > pos[0][1]
        assert pos[10][1] < 0.15

    def test_bad_tree_rejected(self):
        s = default_humanoid()
        parents = s.parents.copy()
        parents[3] = 5  # forward reference breaks the topological order
        with pytest.raises(ValueError):
            type(s)(parents, s.offsets, s.bone_radii, s.torso_joints, s.joint_limits)


class TestForwardKinematics:
    def test_rest_pose_positions(self):
        s = default_humanoid()
        G = forward_kinematics(s, np.zeros(THETA_DIM))
        assert np.allclose(G[:, :3, 3], s.rest_joint_positions(), atol=1e-12)

    def test_zero_pose_skinning_identity(self):
        s = default_humanoid()
        A = skinning_transforms(s, np.zeros(THETA_DIM))
        assert np.abs(A - np.eye(4)).max() < 1e-12


class TestLbs:
    def test_zero_pose_identity_everywhere(self):
        s = default_humanoid()
        rng = np.random.default_rng(0)
        pts = rng.uniform(-0.5, 0.5, size=(50, 3)) + np.array([0.0, 1.0, 0.0])
        w = bone_weights(s, pts)
        out = lbs_batch(s, np.zeros(THETA_DIM), pts, w)
        assert np.abs(out - pts).max() < 1e-12

    def test_single_bone_rigid_rotation(self):
        # rotate the left elbow joint 90 deg about z; a point on the forearm,
        # fully bound to the elbow driver column, rotates rigidly about it
        s = default_humanoid()
        theta = np.zeros(THETA_DIM)
        joint = 18  # l_elbow
        theta[3 * joint + 2] = np.pi / 2
        elbow = s.rest_joint_positions()[joint]
        p = elbow + np.array([0.1, 0.0, 0.0])
        w = np.zeros(24)
        w[18] = 1.0
        out = skeleton_lbs(SkeletonPose(s, theta), p, w)
        # analytic FK oracle: rotate the offset about the elbow by 90 deg in z
        expect = elbow + np.array([0.0, 0.1, 0.0])
        assert np.abs(out - expect).max() < 1e-9

    def test_identical_bones_split_weight(self):
        # only the elbow is rotated, so columns 18 and 20 carry identical
        # transforms; splitting weight across them must match either alone
        s = default_humanoid()
        theta = np.zeros(THETA_DIM)
        theta[3 * 18 + 2] = 0.5
        p = s.rest_joint_positions()[18] + np.array([0.12, 0.0, 0.0])
        w_single = np.zeros(24)
        w_single[18] = 1.0
        out_a = skeleton_lbs(SkeletonPose(s, theta), p, w_single)
        w_b = np.zeros(24)
        w_b[18] = 0.5
        w_b[20] = 0.5
        out_b = skeleton_lbs(SkeletonPose(s, theta), p, w_b)
        assert np.abs(out_a - out_b).max() < 1e-9

    def test_unnormalized_weights_rejected(self):
        s = default_humanoid()
        with pytest.raises(ValueError):
            skeleton_lbs(SkeletonPose(s, np.zeros(THETA_DIM)), np.zeros(3), np.full(24, 0.1))


class TestBoneWeights:
    def test_rows_normalized(self):
        s = default_humanoid()
        rng = np.random.default_rng(4)
        pts = rng.uniform(-0.6, 0.6, size=(40, 3)) + np.array([0.0, 1.0, 0.0])
        w = bone_weights(s, pts)
        assert np.allclose(w.sum(axis=1), 1.0, atol=1e-12)
        assert (w >= 0).all()
        # terminal joints drive no segment
        assert np.allclose(w[:, 22], 0.0) and np.allclose(w[:, 23], 0.0)

    def test_closest_bone_dominates(self):
        s = default_humanoid()
        # a point right on the left forearm axis is driven by the elbow
        pos = s.rest_joint_positions()
        mid = 0.5 * (pos[18] + pos[20])
        w = bone_weights(s, mid[None])[0]
        assert w.argmax() == 18
