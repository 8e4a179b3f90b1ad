import numpy as np
import pytest

from camera import CameraView
from cloud import (PointCloud, merge, normals_from_depth, outlier_mask, remove_statistical_outliers,
                   unproject)
from conftest import make_cloud, square
from error_handlers import InvalidArgumentError
from raster import RGBDView, rasterize


def plane_view(view: CameraView, depth: float = 2.0) -> RGBDView:
    height, width = view.shape
    return RGBDView.from_arrays(np.full((height, width, 3), 0.3), np.full((height, width), depth), view)


class TestPointCloud:
    def test_scalar_step_is_broadcast(self):
        pc = make_cloud(np.zeros((4, 3)), steps=3)
        assert pc.steps.tolist() == [3, 3, 3, 3]

    def test_arrays_are_read_only(self):
        pc = make_cloud(np.zeros((2, 3)))
        with pytest.raises(ValueError):
            pc.positions[0, 0] = 1.0

    def test_rejects_non_unit_orientation(self):
        with pytest.raises(InvalidArgumentError):
            make_cloud(np.zeros((1, 3)), orientations=[[0.0, 0.0, 2.0]])

    def test_rejects_mismatched_lengths(self):
        with pytest.raises(InvalidArgumentError):
            PointCloud(np.zeros((2, 3)), np.zeros((3, 3)), np.tile([0.0, 0, 1], (2, 1)), 0)

    def test_empty(self):
        pc = PointCloud.empty()
        assert len(pc) == 0
        assert pc.bbox_diagonal() == 0.0

    def test_indexing(self):
        pc = make_cloud([[1.0, 2.0, 3.0]], steps=5)
        point = pc[0]
        assert point.step == 5
        np.testing.assert_array_equal(point.position, [1.0, 2.0, 3.0])


class TestUnproject:
    def test_one_point_per_masked_pixel(self, front_view):
        rgbd = plane_view(front_view)
        pc = unproject(rgbd)
        assert len(pc) == 64 * 64
        np.testing.assert_allclose(pc.positions[:, 2], 0.5, atol=1e-9)
        assert set(pc.steps.tolist()) == {0}

    def test_select_restricts_pixels(self, front_view):
        rgbd = plane_view(front_view)
        select = np.zeros(front_view.shape, dtype=bool)
        select[10, 10:20] = True
        assert len(unproject(rgbd, select)) == 10

    def test_plane_orientation_faces_camera(self, front_view):
        pc = unproject(plane_view(front_view))
        np.testing.assert_allclose(pc.orientations, np.tile([0.0, 0.0, 1.0], (len(pc), 1)), atol=1e-9)

    def test_carries_view_step(self, intrinsics):
        view = CameraView.orbit(60.0, 0.0, 2.5, intrinsics, step=4)
        pc = unproject(plane_view(view))
        assert set(pc.steps.tolist()) == {4}

    def test_round_trip_positions_project_back(self, sphere_mesh, front_view):
        rgbd = rasterize(sphere_mesh, front_view)
        pc = unproject(rgbd)
        u, v, z = front_view.project(pc.positions)
        rows, cols = np.nonzero(rgbd.mask)
        np.testing.assert_allclose(u, cols, atol=1e-9)
        np.testing.assert_allclose(v, rows, atol=1e-9)
        np.testing.assert_allclose(z, rgbd.depth[rgbd.mask], atol=1e-9)

    def test_empty_mask_gives_empty_cloud(self, front_view):
        assert len(unproject(RGBDView.empty(front_view))) == 0


class TestNormals:
    def test_sphere_normals_are_radial(self, sphere_mesh, front_view):
        rgbd = rasterize(sphere_mesh, front_view)
        normals = normals_from_depth(rgbd)
        pc = unproject(rgbd)
        radial = pc.positions / np.linalg.norm(pc.positions, axis=1, keepdims=True)
        dots = np.einsum("ij,ij->i", normals[rgbd.mask], radial)
        assert np.median(dots) > 0.99

    def test_normals_face_their_camera(self, sphere_mesh, intrinsics):
        view = CameraView.orbit(-60.0, 20.0, 2.5, intrinsics)
        rgbd = rasterize(sphere_mesh, view)
        pc = unproject(rgbd)
        toward = view.center - pc.positions
        assert np.all(np.einsum("ij,ij->i", pc.orientations, toward) > 0)

    def test_isolated_pixel_falls_back_to_view_direction(self, front_view):
        depth = np.zeros(front_view.shape)
        depth[20, 20] = 2.0
        rgbd = RGBDView.from_arrays(np.zeros(front_view.shape + (3,)), depth, front_view)
        pc = unproject(rgbd)
        toward = front_view.center - pc.positions[0]
        np.testing.assert_allclose(pc.orientations[0], toward / np.linalg.norm(toward), atol=1e-9)

    def test_unmasked_pixels_are_zero(self, front_view):
        rgbd = RGBDView.from_arrays(np.zeros(front_view.shape + (3,)), np.zeros(front_view.shape), front_view)
        assert not normals_from_depth(rgbd).any()


class TestMerge:
    def test_concatenates_in_order(self):
        a = make_cloud(np.zeros((2, 3)), steps=0)
        b = make_cloud(np.ones((3, 3)), steps=1)
        merged = merge(a, b)
        assert len(merged) == 5
        assert merged.steps.tolist() == [0, 0, 1, 1, 1]

    def test_empty_sides(self):
        a = make_cloud(np.zeros((2, 3)))
        assert merge(a, PointCloud.empty()) is a
        assert merge(PointCloud.empty(), a) is a


class TestOutliers:
    @staticmethod
    def grid(n: int = 10, spacing: float = 0.01) -> np.ndarray:
        axis = np.arange(n) * spacing
        xx, yy, zz = np.meshgrid(axis, axis, axis, indexing="ij")
        return np.stack([xx, yy, zz], axis=-1).reshape(-1, 3)

    def test_far_point_is_the_only_removal(self):
        positions = np.concatenate([self.grid(), [[5.0, 5.0, 5.0]]])
        keep = outlier_mask(positions, k=16, sigma_mult=2.0)
        assert not keep[-1]
        assert keep.sum() == len(positions) - 1

    @pytest.mark.parametrize("spacing", [0.01, 1.0])
    def test_regular_grid_is_unchanged(self, spacing):
        assert outlier_mask(self.grid(spacing=spacing), k=16, sigma_mult=2.0).all()

    def test_idempotent_after_removal(self):
        pc = make_cloud(np.concatenate([self.grid(spacing=1.0), [[50.0, 50.0, 50.0]]]))
        once = remove_statistical_outliers(pc, k=16, sigma_mult=2.0)
        assert len(once) == 1000
        assert remove_statistical_outliers(once, k=16, sigma_mult=2.0) is once

    def test_small_floating_cluster_is_removed(self):
        floaters = np.array([[5.0, 5.0, 5.0], [5.01, 5.0, 5.0], [5.0, 5.01, 5.0]])
        positions = np.concatenate([self.grid(), floaters])
        keep = outlier_mask(positions, k=16, sigma_mult=2.0)
        assert keep[:-3].all()
        assert not keep[-3:].any()

    def test_floor_can_be_lowered(self):
        # without the median floor the grid corners fall outside mean + 2 std
        keep = outlier_mask(self.grid(spacing=1.0), k=16, sigma_mult=2.0, floor_ratio=0.0)
        assert not keep[0]
        assert keep.sum() < 1000

    def test_at_most_k_points_are_kept(self):
        positions = np.random.default_rng(0).normal(size=(16, 3))
        assert outlier_mask(positions, k=16).all()

    def test_rejects_bad_k(self):
        with pytest.raises(InvalidArgumentError):
            outlier_mask(np.zeros((3, 3)), k=0)

    def test_cloud_wrapper_keeps_attributes(self):
        positions = np.concatenate([self.grid(), [[5.0, 5.0, 5.0]]])
        pc = make_cloud(positions, steps=np.arange(len(positions)))
        kept = remove_statistical_outliers(pc, k=16, sigma_mult=2.0)
        assert len(kept) == len(pc) - 1
        np.testing.assert_array_equal(kept.steps, np.arange(len(pc) - 1))

    def test_unchanged_cloud_is_returned_as_is(self):
        pc = make_cloud(np.random.default_rng(1).normal(size=(8, 3)))
        assert remove_statistical_outliers(pc, k=16) is pc
