import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from poseforge.errors import DataError, InvalidRotationError
from poseforge.geometry import (CameraIntrinsics, Pose3D, SkeletonParams,
                                axis_angle_to_matrix, camera_for_bbox,
                                canonicalize_axis_angle, fit_skeleton_pose,
                                heading_yaw, matrix_to_axis_angle,
                                pose_skeleton, project, rotation_between,
                                yaw_matrix)
from poseforge.skeleton import (SkeletonDefinition, default_skeleton,
                                load_skeleton_file, save_skeleton_file)


def rotation_axis_oracle(R):
    """Eigen-analysis: the rotation axis is the unit eigenvector of
    eigenvalue 1, the angle comes from the trace."""
    w, v = np.linalg.eig(R)
    axis = np.real(v[:, np.argmin(np.abs(w - 1.0))])
    axis /= np.linalg.norm(axis)
    angle = math.acos(max(-1.0, min(1.0, (np.trace(R) - 1.0) / 2.0)))
    return axis, angle


class TestAxisAngle:
    def test_zero_rotation_is_identity(self):
        assert np.array_equal(axis_angle_to_matrix([0.0, 0.0, 0.0]), np.eye(3))

    def test_quarter_turn_about_z(self):
        # closed-form Rodrigues: cos/sin at theta = pi/2
        R = axis_angle_to_matrix([0.0, 0.0, math.pi / 2.0])
        np.testing.assert_allclose(R @ [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(R @ [0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], atol=1e-12)

    def test_half_turn_about_x(self):
        R = axis_angle_to_matrix([math.pi, 0.0, 0.0])
        np.testing.assert_allclose(R, np.diag([1.0, -1.0, -1.0]), atol=1e-12)

    def test_identity_maps_to_zero_vector(self):
        assert np.array_equal(matrix_to_axis_angle(np.eye(3)), np.zeros(3))

    def test_pi_rotation_axis_against_eigen_oracle(self):
        R = np.diag([1.0, -1.0, -1.0])
        aa = matrix_to_axis_angle(R)
        axis_o, angle_o = rotation_axis_oracle(R)
        assert abs(np.linalg.norm(aa) - angle_o) < 1e-12
        axis = aa / np.linalg.norm(aa)
        assert min(np.linalg.norm(axis - axis_o), np.linalg.norm(axis + axis_o)) < 1e-12

    def test_round_trip_axis_angle_1000_random(self):
        rng = np.random.default_rng(42)
        for _ in range(1000):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            a = axis * rng.uniform(0.0, math.pi - 1e-3)
            back = matrix_to_axis_angle(axis_angle_to_matrix(a))
            assert np.abs(back - a).max() < 1e-9

    def test_matrix_round_trip_includes_near_pi(self):
        rng = np.random.default_rng(7)
        worst = 0.0
        for _ in range(2000):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            theta = math.pi - 10.0 ** rng.uniform(-14.0, -2.0)
            R = axis_angle_to_matrix(axis * theta)
            R2 = axis_angle_to_matrix(matrix_to_axis_angle(R))
            worst = max(worst, np.abs(R2 - R).max())
        for _ in range(500):
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            R = axis_angle_to_matrix(axis * math.pi)
            R2 = axis_angle_to_matrix(matrix_to_axis_angle(R))
            worst = max(worst, np.abs(R2 - R).max())
        assert worst < 1e-9

    @given(st.lists(st.floats(-1.0, 1.0), min_size=3, max_size=3),
           st.floats(0.0, 4.0 * math.pi))
    @settings(max_examples=200, deadline=None)
    def test_output_always_orthonormal(self, direction, theta):
        v = np.array(direction)
        n = np.linalg.norm(v)
        a = v / n * theta if n > 1e-6 else np.zeros(3)
        R = axis_angle_to_matrix(a)
        assert np.abs(R.T @ R - np.eye(3)).max() < 1e-9
        assert abs(np.linalg.det(R) - 1.0) < 1e-9

    def test_rejects_non_orthonormal(self):
        bad = np.eye(3)
        bad[0, 1] = 1e-3
        with pytest.raises(InvalidRotationError):
            matrix_to_axis_angle(bad)

    def test_rejects_reflection(self):
        with pytest.raises(InvalidRotationError):
            matrix_to_axis_angle(np.diag([1.0, 1.0, -1.0]))

    def test_canonicalize_wraps_into_pi(self):
        a = np.array([0.0, 1.5 * math.pi, 0.0])
        c = canonicalize_axis_angle(a)
        assert np.linalg.norm(c) <= math.pi + 1e-12
        np.testing.assert_allclose(axis_angle_to_matrix(c),
                                   axis_angle_to_matrix(a), atol=1e-12)

    def test_rotation_between_antiparallel(self):
        u = np.array([0.0, 1.0, 0.0])
        R = rotation_between(u, -u)
        np.testing.assert_allclose(R @ u, -u, atol=1e-12)


class TestSkeleton:
    def test_rest_pose_identity(self):
        skel = default_skeleton()
        params = SkeletonParams(np.zeros(3), np.zeros((23, 3)))
        pose = pose_skeleton(params, skel)
        np.testing.assert_array_equal(pose.joints, skel.rest_pose())

    def test_translation_adds_to_every_joint(self):
        skel = default_skeleton()
        t = np.array([1.0, 2.0, 3.0])
        pose = pose_skeleton(SkeletonParams(np.zeros(3), np.zeros((23, 3)),
                                            translation=t), skel)
        np.testing.assert_allclose(pose.joints, skel.rest_pose() + t, atol=1e-12)

    def test_shape_scales_rest_pose_exactly(self):
        skel = default_skeleton()
        pose = pose_skeleton(SkeletonParams(np.zeros(3), np.zeros((23, 3)),
                                            shape=1.5), skel)
        np.testing.assert_array_equal(pose.joints, skel.rest_pose(1.5))

    def test_single_bone_chain_parent_rotation(self):
        # two-joint chain, 90 degrees about z at the root: offset (0,-1,0)
        # rotates to (1,0,0)
        chain = SkeletonDefinition(("a", "b"), (-1, 0),
                                   np.array([[0.0, 0.0, 0.0], [0.0, -1.0, 0.0]]),
                                   (), {})
        params = SkeletonParams(np.array([0.0, 0.0, math.pi / 2.0]),
                                np.zeros((1, 3)))
        pose = pose_skeleton(params, chain)
        np.testing.assert_allclose(pose.joints[1], [1.0, 0.0, 0.0], atol=1e-12)

    def test_fit_skeleton_pose_round_trip(self):
        skel = default_skeleton()
        rng = np.random.default_rng(3)
        for _ in range(25):
            params = SkeletonParams(rng.normal(0.0, 0.5, 3),
                                    rng.normal(0.0, 0.4, (23, 3)))
            joints = pose_skeleton(params, skel).joints
            root, body = fit_skeleton_pose(joints, skel)
            redone = pose_skeleton(SkeletonParams(root, body), skel).joints
            assert np.abs(redone - joints).max() < 1e-9

    def test_body_pose_length_validated(self):
        skel = default_skeleton()
        with pytest.raises(DataError):
            pose_skeleton(SkeletonParams(np.zeros(3), np.zeros((5, 3))), skel)

    def test_shape_bounds_validated(self):
        with pytest.raises(DataError):
            SkeletonParams(np.zeros(3), np.zeros((23, 3)), shape=3.0)

    def test_schema_file_round_trip(self, tmp_path):
        skel = default_skeleton()
        path = tmp_path / "skel.txt"
        save_skeleton_file(skel, path)
        loaded = load_skeleton_file(path)
        assert loaded.joint_names == skel.joint_names
        assert loaded.parents == skel.parents
        assert loaded.joint_names_2d == skel.joint_names_2d
        assert loaded.map_2d_to_3d == skel.map_2d_to_3d
        np.testing.assert_allclose(loaded.rest_offsets, skel.rest_offsets,
                                   atol=1e-6)

    def test_schema_file_bad_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("joint root -1 0 0 0\nwhatever nonsense\n")
        with pytest.raises(DataError, match="bad.txt:2"):
            load_skeleton_file(path)


class TestProjection:
    def test_optical_axis(self):
        cam = CameraIntrinsics(np.array([5000.0, 5000.0]), np.array([128.0, 128.0]))
        p = project(Pose3D.all_visible(np.array([[0.0, 0.0, 5.0]])), cam)
        np.testing.assert_array_equal(p.joints[0], [128.0, 128.0])

    def test_pinhole_arithmetic(self):
        cam = CameraIntrinsics(np.array([5000.0, 5000.0]), np.array([128.0, 128.0]))
        p = project(Pose3D.all_visible(np.array([[1.0, 0.0, 5.0]])), cam)
        np.testing.assert_allclose(p.joints[0], [1128.0, 128.0], atol=1e-9)

    def test_doubling_z_halves_offset(self):
        cam = CameraIntrinsics(np.array([1000.0, 1000.0]), np.array([0.0, 0.0]))
        near = project(Pose3D.all_visible(np.array([[0.5, 0.25, 2.0]])), cam)
        far = project(Pose3D.all_visible(np.array([[0.5, 0.25, 4.0]])), cam)
        np.testing.assert_allclose(near.joints[0], 2.0 * far.joints[0], atol=1e-9)

    def test_behind_camera_marked_invisible(self):
        cam = CameraIntrinsics(np.array([1000.0, 1000.0]), np.array([0.0, 0.0]))
        p = project(Pose3D.all_visible(np.array([[0.0, 0.0, -1.0],
                                                 [0.0, 0.0, 2.0]])), cam)
        assert not p.visibility[0]
        assert p.visibility[1]

    def test_scale_invariance_about_camera_center(self):
        rng = np.random.default_rng(11)
        cam = CameraIntrinsics(np.array([5000.0, 5000.0]), np.array([64.0, 32.0]))
        pts = rng.normal(0.0, 0.4, (10, 3)) + [0.0, 0.0, 5.0]
        a = project(Pose3D.all_visible(pts), cam)
        b = project(Pose3D.all_visible(3.0 * pts), cam)
        np.testing.assert_allclose(a.joints, b.joints, atol=1e-9)

    def test_bbox_camera_centers_principal_point(self):
        cam = camera_for_bbox((10.0, 20.0, 100.0, 60.0))
        np.testing.assert_array_equal(cam.p, [60.0, 50.0])
        with pytest.raises(DataError):
            camera_for_bbox((0.0, 0.0, 0.0, 10.0))

    def test_heading_yaw_tilt_robust(self):
        # the heading of a pure yaw survives composition with a pi flip
        for yaw in (-0.5, 0.0, 1.2):
            a = yaw_matrix(yaw)
            flip = axis_angle_to_matrix([math.pi, 0.0, 0.0])
            from poseforge.geometry import matrix_to_axis_angle as to_aa
            assert abs(heading_yaw(to_aa(a)) - yaw) < 1e-12
            assert abs(heading_yaw(to_aa(a @ flip)) - yaw) < 1e-9
