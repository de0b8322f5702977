import numpy as np
import pytest

from sparsesplat.errors import InvalidArgumentError
from sparsesplat.geometry import (
    CameraView,
    Intrinsics,
    Pose,
    interpolate_trajectory,
    look_at_pose,
    pose_compose,
    pose_inverse,
    project_point,
    quat_to_matrix,
    slerp,
)


def _intr(fx=100.0, fy=100.0, cx=50.0, cy=50.0, w=100, h=100):
    return Intrinsics(fx, fy, cx, cy, w, h)


def _random_pose(rng):
    return Pose(rng.normal(size=4), rng.normal(size=3))


class TestIntrinsics:
    def test_validation(self):
        with pytest.raises(InvalidArgumentError):
            Intrinsics(-1.0, 1.0, 0.0, 0.0, 10, 10)
        with pytest.raises(InvalidArgumentError):
            Intrinsics(1.0, 1.0, 10.0, 0.0, 10, 10)  # cx out of range

    def test_ok(self):
        k = _intr()
        assert k.width == 100


class TestPose:
    def test_quaternion_normalized(self):
        p = Pose(np.array([2.0, 0.0, 0.0, 0.0]), np.zeros(3))
        assert abs(np.linalg.norm(p.rotation) - 1.0) < 1e-9

    def test_inverse_identity(self):
        p = Pose()
        inv = pose_inverse(p)
        assert np.allclose(inv.rotation, [1, 0, 0, 0])
        assert np.allclose(inv.translation, 0)

    def test_inverse_pure_translation(self):
        p = Pose(translation=np.array([1.0, 2.0, 3.0]))
        inv = pose_inverse(p)
        assert np.allclose(inv.translation, [-1, -2, -3])

    def test_inverse_composition_random(self):
        # derived check: compose(p, inverse(p)) must be the identity
        rng = np.random.default_rng(0)
        for _ in range(20):
            p = _random_pose(rng)
            ident = pose_compose(p, pose_inverse(p))
            angle = 2 * np.arccos(np.clip(abs(ident.rotation[0]), -1, 1))
            assert angle < 1e-9
            assert np.linalg.norm(ident.translation) < 1e-9


class TestProjectPoint:
    def test_principal_ray(self):
        view = CameraView(_intr(), Pose(), "v")
        u, v, z = project_point(view, (0.0, 0.0, 1.0))
        assert (u, v, z) == (50.0, 50.0, 1.0)

    def test_offset_point(self):
        view = CameraView(_intr(), Pose(), "v")
        u, v, z = project_point(view, (0.5, 0.0, 1.0))
        assert (u, v, z) == (100.0, 50.0, 1.0)

    def test_depth_addition(self):
        # camera moved back by one unit: w2c translation (0, 0, 1)
        view = CameraView(_intr(), Pose(translation=np.array([0.0, 0.0, 1.0])), "v")
        _, _, z = project_point(view, (0.0, 0.0, 1.0))
        assert z == 2.0

    def test_principal_axis_hits_principal_point(self):
        rng = np.random.default_rng(1)
        for _ in range(10):
            pose = look_at_pose(rng.normal(size=3) * 2 +sum([np.array([0, 0, -3.0])]), np.zeros(3))
            view = CameraView(_intr(cx=47.0, cy=31.0), pose, "v")
            # a point straight down the optical axis
            inv = pose_inverse(pose)
            depth = 2.0
            world = inv.apply(np.array([0.0, 0.0, depth]))
            u, v, z = project_point(view, world)
            assert abs(u - 47.0) < 1e-9 and abs(v - 31.0) < 1e-9
            assert abs(z - depth) < 1e-9


class TestTrajectory:
    def test_count_validation(self):
        with pytest.raises(InvalidArgumentError):
            interpolate_trajectory(Pose(), Pose(), 1)

    def test_linear_midpoint(self):
        b = Pose(translation=np.array([1.0, 0.0, 0.0]))
        traj = interpolate_trajectory(Pose(), b, 3)
        assert np.allclose(traj[1].translation, [0.5, 0.0, 0.0])

    def test_slerp_midpoint_rotation(self):
        angle = np.pi / 2
        qb = np.array([np.cos(angle / 2), 0.0, 0.0, np.sin(angle / 2)])
        traj = interpolate_trajectory(Pose(), Pose(qb, np.zeros(3)), 3)
        half = np.array([np.cos(angle / 4), 0.0, 0.0, np.sin(angle / 4)])
        assert np.allclose(traj[1].rotation, half, atol=1e-12)

    def test_two_samples_are_endpoints(self):
        rng = np.random.default_rng(2)
        a, b = _random_pose(rng), _random_pose(rng)
        traj = interpolate_trajectory(a, b, 2)
        assert traj[0] is a and traj[1] is b

    def test_endpoints_exact_fieldwise(self):
        rng = np.random.default_rng(3)
        a, b = _random_pose(rng), _random_pose(rng)
        traj = interpolate_trajectory(a, b, 7)
        assert np.array_equal(traj[0].rotation, a.rotation)
        assert np.array_equal(traj[0].translation, a.translation)
        assert np.array_equal(traj[-1].rotation, b.rotation)
        assert np.array_equal(traj[-1].translation, b.translation)

    def test_antipodal_slerp_same_rotations(self):
        rng = np.random.default_rng(4)
        q = rng.normal(size=4)
        q /= np.linalg.norm(q)
        for t in (0.25, 0.5, 0.75):
            r_pos = quat_to_matrix(slerp(q, q, t))
            r_neg = quat_to_matrix(slerp(q, -q, t))
            assert np.allclose(r_pos, r_neg, atol=1e-12)

    def test_smoothness_second_differences(self):
        rng = np.random.default_rng(5)
        for _ in range(10):
            a, b = _random_pose(rng), _random_pose(rng)
            traj = interpolate_trajectory(a, b, 8)
            ts = np.stack([p.translation for p in traj])
            d1 = np.diff(ts, axis=0)
            d2 = np.diff(d1, axis=0)
            max_d1 = np.linalg.norm(d1, axis=1).max()
            max_d2 = np.linalg.norm(d2, axis=1).max() if len(d2) else 0.0
            assert max_d2 <= 2.0 * max_d1 + 1e-12


class TestLookAt:
    def test_camera_on_z_axis(self):
        pose = look_at_pose((0.0, 0.0, -2.0), (0.0, 0.0, 0.0))
        cam_point = pose.apply(np.zeros(3))
        assert np.allclose(cam_point, [0, 0, 2])

    def test_rotation_is_orthonormal(self):
        rng = np.random.default_rng(6)
        for _ in range(10):
            pose = look_at_pose(rng.normal(size=3) * 3 + np.array([0, 0, -5]), np.zeros(3))
            R = pose.rotation_matrix()
            assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
            assert abs(np.linalg.det(R) - 1.0) < 1e-9
