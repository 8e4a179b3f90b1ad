import math

import numpy as np
import pytest

from camera import (CameraView, Intrinsics, Pose, Trajectory, build_trajectory, circular_azimuths,
                    compose_relative, evaluation_views, inpaint_views, orbit_pose, relative_transform,
                    wrap_azimuth, zigzag_azimuths)
from error_handlers import InvalidArgumentError


class TestIntrinsics:
    def test_from_fov_centres_principal_point(self):
        k = Intrinsics.from_fov(512, fov_deg=50.0)
        assert k.cx == pytest.approx(255.5)
        assert k.cy == pytest.approx(255.5)
        assert k.fx == pytest.approx(512 / (2 * math.tan(math.radians(25.0))))
        assert k.shape == (512, 512)

    def test_rejects_tiny_images(self):
        with pytest.raises(InvalidArgumentError):
            Intrinsics(10.0, 10.0, 2.0, 2.0, 4, 4)

    def test_dict_round_trip(self):
        k = Intrinsics.from_fov(64, 48, fov_deg=40.0)
        assert Intrinsics.from_dict(k.to_dict()) == k


class TestOrbitPose:
    def test_front_camera_looks_down_negative_z(self):
        pose = orbit_pose(0.0, 0.0, 2.5)
        np.testing.assert_allclose(pose.center, [0.0, 0.0, 2.5], atol=1e-12)
        np.testing.assert_allclose(pose.to_camera(np.zeros((1, 3)))[0], [0.0, 0.0, 2.5], atol=1e-12)

    def test_image_axes_at_front_view(self):
        pose = orbit_pose(0.0, 0.0, 2.5)
        # image +x is world +x and image +y (down) is world -y
        np.testing.assert_allclose(pose.R[0], [1.0, 0.0, 0.0], atol=1e-12)
        np.testing.assert_allclose(pose.R[1], [0.0, -1.0, 0.0], atol=1e-12)

    def test_rotation_is_proper(self):
        for azimuth in (-150.0, -30.0, 45.0, 180.0):
            pose = orbit_pose(azimuth, 20.0, 3.0)
            np.testing.assert_allclose(pose.R @ pose.R.T, np.eye(3), atol=1e-12)
            assert np.linalg.det(pose.R) == pytest.approx(1.0)
            assert np.linalg.norm(pose.center) == pytest.approx(3.0)

    def test_rejects_pole(self):
        with pytest.raises(InvalidArgumentError):
            orbit_pose(0.0, 90.0, 2.5)

    def test_rejects_reflection(self):
        with pytest.raises(InvalidArgumentError):
            Pose(np.diag([1.0, 1.0, -1.0]), np.zeros(3))


class TestRelativeTransform:
    def test_maps_anchor_camera_points_to_target(self):
        anchor = orbit_pose(0.0, 0.0, 2.5)
        target = orbit_pose(60.0, 10.0, 2.5)
        r_rel, t_rel = relative_transform(anchor, target)
        points = np.random.default_rng(0).normal(size=(20, 3))
        expected = target.to_camera(points)
        actual = anchor.to_camera(points) @ r_rel.T + t_rel
        np.testing.assert_allclose(actual, expected, atol=1e-12)

    def test_identity_for_same_pose(self):
        pose = orbit_pose(30.0, 0.0, 2.5)
        r_rel, t_rel = relative_transform(pose, pose)
        np.testing.assert_allclose(r_rel, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(t_rel, np.zeros(3), atol=1e-12)

    def test_composition(self):
        a, b, c = orbit_pose(0.0, 0.0, 2.5), orbit_pose(60.0, 0.0, 2.5), orbit_pose(-60.0, 20.0, 2.5)
        r, t = compose_relative(relative_transform(a, b), relative_transform(b, c))
        r_direct, t_direct = relative_transform(a, c)
        np.testing.assert_allclose(r, r_direct, atol=1e-12)
        np.testing.assert_allclose(t, t_direct, atol=1e-12)


class TestCameraView:
    def test_origin_projects_to_principal_point(self, front_view):
        u, v, z = front_view.project(np.zeros((1, 3)))
        assert u[0] == pytest.approx(front_view.intrinsics.cx)
        assert v[0] == pytest.approx(front_view.intrinsics.cy)
        assert z[0] == pytest.approx(2.5)

    def test_pixel_rays_invert_projection(self, front_view):
        rays = front_view.pixel_rays()
        k = front_view.intrinsics
        assert rays.shape == (k.height, k.width, 3)
        assert rays[0, 0, 0] == pytest.approx(-k.cx / k.fx)
        assert rays[5, 7, 1] == pytest.approx((5 - k.cy) / k.fy)

    def test_integer_pixels_match_half_pixel_centres(self, front_view):
        k = front_view.intrinsics
        assert k.cx == (k.width - 1) / 2.0
        rays = front_view.pixel_rays()
        u = np.arange(k.width) + 0.5
        np.testing.assert_allclose(rays[0, :, 0], (u - k.width / 2.0) / k.fx, atol=1e-12)
        np.testing.assert_allclose(rays[:, 0, 0], -rays[:, -1, 0], atol=1e-12)

    def test_orbit_metadata_must_match_pose(self, intrinsics):
        with pytest.raises(InvalidArgumentError):
            CameraView(intrinsics, orbit_pose(10.0, 0.0, 2.5), 0, 20.0, 0.0, 2.5)

    def test_dict_round_trip(self, intrinsics):
        view = CameraView.orbit(-120.0, 20.0, 2.5, intrinsics, step=3)
        restored = CameraView.from_dict(view.to_dict())
        assert restored.step == 3
        assert restored.azimuth_deg == -120.0
        assert restored.pose.allclose(view.pose)


class TestAzimuths:
    def test_wrap(self):
        assert wrap_azimuth(180.0) == 180.0
        assert wrap_azimuth(-180.0) == 180.0
        assert wrap_azimuth(240.0) == -120.0
        assert wrap_azimuth(360.0) == 0.0

    def test_zigzag_sixty(self):
        assert zigzag_azimuths(60.0) == [60.0, -60.0, 120.0, -120.0, 180.0]

    def test_zigzag_ninety(self):
        assert zigzag_azimuths(90.0) == [90.0, -90.0, 180.0]

    def test_zigzag_thirty(self):
        azimuths = zigzag_azimuths(30.0)
        assert len(azimuths) == 11
        assert azimuths[-1] == 180.0

    def test_zigzag_negative_first(self):
        assert zigzag_azimuths(60.0, positive_first=False) == [-60.0, 60.0, -120.0, 120.0, 180.0]

    def test_zigzag_one_twenty_closes_at_back(self):
        assert zigzag_azimuths(120.0) == [120.0, -120.0, 180.0]

    def test_circular_sixty(self):
        assert circular_azimuths(60.0) == [60.0, 120.0, 180.0, -120.0, -60.0]

    def test_circular_one_twenty(self):
        assert circular_azimuths(120.0) == [120.0, -120.0]

    def test_circular_gap_is_constant(self):
        azimuths = [0.0] + circular_azimuths(45.0)
        gaps = {round((b - a) % 360.0, 9) for a, b in zip(azimuths, azimuths[1:])}
        assert gaps == {45.0}

    @pytest.mark.parametrize("degree", [70.0, 0.0, -60.0, float("nan")])
    def test_invalid_degree(self, degree):
        with pytest.raises(InvalidArgumentError):
            zigzag_azimuths(degree)

    def test_circular_rejects_non_divisor(self):
        with pytest.raises(InvalidArgumentError):
            circular_azimuths(70.0)

    def test_same_azimuth_set(self):
        zig = {a % 360.0 for a in zigzag_azimuths(60.0)}
        circ = {a % 360.0 for a in circular_azimuths(60.0)}
        assert zig == circ


class TestTrajectory:
    def test_zigzag_views_and_steps(self, intrinsics):
        trajectory = build_trajectory("zigzag", 60.0, 2.5, intrinsics, inpaint_count=4, seed=7)
        assert [v.azimuth_deg for v in trajectory.main_views] == [60.0, -60.0, 120.0, -120.0, 180.0]
        assert all(v.elevation_deg == 0.0 for v in trajectory.main_views)
        assert [v.step for v in trajectory.views] == list(range(1, 10))
        assert trajectory.anchor.step == 0
        assert trajectory.anchor.azimuth_deg == 0.0

    def test_inpaint_views_are_seeded(self, intrinsics):
        first = inpaint_views(4, 11, 2.5, intrinsics)
        second = inpaint_views(4, 11, 2.5, intrinsics)
        assert [v.azimuth_deg for v in first] == [v.azimuth_deg for v in second]
        for view in first:
            assert -30.0 <= view.elevation_deg <= 60.0
            assert -180.0 < view.azimuth_deg <= 180.0

    def test_dict_round_trip(self, intrinsics):
        trajectory = build_trajectory("circular", 90.0, 2.5, intrinsics, inpaint_count=2, seed=3)
        restored = Trajectory.from_dict(trajectory.to_dict())
        assert restored.kind == "circular"
        assert [v.azimuth_deg for v in restored.main_views] == [90.0, 180.0, -90.0]
        assert len(restored.inpaint_views) == 2
        assert restored.to_dict() == trajectory.to_dict()

    def test_unknown_kind(self, intrinsics):
        with pytest.raises(InvalidArgumentError):
            build_trajectory("spiral", 60.0, 2.5, intrinsics)


class TestEvaluationViews:
    def test_mesh12_alternates_elevation(self, intrinsics):
        views = evaluation_views(2.5, intrinsics, "mesh12")
        assert len(views) == 12
        assert [v.elevation_deg for v in views] == [0.0, 20.0] * 6
        assert [v.azimuth_deg for v in views][:4] == [0.0, 30.0, 60.0, 90.0]

    def test_nvs6(self, intrinsics):
        views = evaluation_views(2.5, intrinsics, "nvs6")
        assert len(views) == 6
        assert all(v.elevation_deg == 20.0 for v in views)

    def test_unknown_protocol(self, intrinsics):
        with pytest.raises(InvalidArgumentError):
            evaluation_views(2.5, intrinsics, "mesh24")
