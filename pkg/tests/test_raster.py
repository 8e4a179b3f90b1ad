import numpy as np
import pytest

from camera import CameraView
from conftest import square
from error_handlers import InvalidArgumentError
from raster import CORPUS_NAMES, RGBDView, TriangleMesh, mesh_vertex_normals, rasterize, synthetic_corpus


class TestTriangleMesh:
    def test_rejects_out_of_range_face(self):
        with pytest.raises(InvalidArgumentError):
            TriangleMesh(np.zeros((3, 3)), np.array([[0, 1, 3]]))

    def test_rejects_colors_outside_unit_range(self):
        with pytest.raises(InvalidArgumentError):
            TriangleMesh(np.eye(3), np.array([[0, 1, 2]]), np.full((3, 3), 1.5))

    def test_subset_faces_drops_unused_vertices(self):
        mesh = square()
        part = mesh.subset_faces(np.array([True, False]))
        assert part.face_count == 1
        assert part.vertex_count == 3
        np.testing.assert_array_equal(part.vertices, mesh.vertices[[0, 1, 2]])

    def test_bbox_diagonal(self):
        assert square(size=2.0).bbox_diagonal() == pytest.approx(np.sqrt(8.0))


class TestRasterize:
    def test_square_depth_and_mask(self, front_view):
        rendered = rasterize(square(), front_view)
        assert rendered.mask.any()
        np.testing.assert_array_equal(rendered.mask, rendered.depth > 0)
        np.testing.assert_allclose(rendered.depth[rendered.mask], 2.5, atol=1e-9)
        np.testing.assert_allclose(rendered.color[rendered.mask], 0.5, atol=1e-12)

    def test_empty_mesh_renders_nothing(self, front_view):
        rendered = rasterize(TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=int)), front_view)
        assert not rendered.mask.any()

    def test_nearer_surface_wins(self, front_view):
        far = square(z=0.0)
        near = square(z=0.5, size=0.5)
        vertices = np.concatenate([far.vertices, near.vertices])
        faces = np.concatenate([far.faces, near.faces + 4])
        colors = np.concatenate([np.tile([1.0, 0.0, 0.0], (4, 1)), np.tile([0.0, 0.0, 1.0], (4, 1))])
        rendered = rasterize(TriangleMesh(vertices, faces, colors), front_view)
        centre = (32, 32)
        assert rendered.depth[centre] == pytest.approx(2.0)
        np.testing.assert_allclose(rendered.color[centre], [0.0, 0.0, 1.0])
        assert rendered.depth[rendered.mask].max() == pytest.approx(2.5)

    def test_both_sides_are_drawn(self, intrinsics):
        back = CameraView.orbit(180.0, 0.0, 2.5, intrinsics)
        assert rasterize(square(), back).mask.any()

    def test_triangles_crossing_the_camera_plane_are_skipped(self, front_view):
        mesh = TriangleMesh(np.array([[-1.0, -1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 1.0, 3.0]]), np.array([[0, 1, 2]]))
        assert not rasterize(mesh, front_view).mask.any()

    def test_triangle_touching_the_near_plane_is_dropped_whole(self, front_view):
        plain = square()
        grazing = np.array([[-3.0, -3.0, 0.0], [3.0, -3.0, 0.0], [0.0, 0.0, 2.5 - 1e-7]])
        mesh = TriangleMesh(np.concatenate([plain.vertices, grazing]),
                            np.concatenate([plain.faces, [[4, 5, 6]]]))
        rendered, expected = rasterize(mesh, front_view), rasterize(plain, front_view)
        np.testing.assert_array_equal(rendered.mask, expected.mask)
        np.testing.assert_array_equal(rendered.depth, expected.depth)

    def test_sphere_front_depth(self, sphere_mesh, front_view):
        rendered = rasterize(sphere_mesh, front_view)
        assert rendered.depth[rendered.mask].min() == pytest.approx(1.5, abs=0.01)
        colors = rendered.color[rendered.mask]
        assert colors.min() >= 0.25 - 1e-9
        assert colors.max() <= 0.75 + 1e-9

    def test_deterministic(self, sphere_mesh, front_view):
        first = rasterize(sphere_mesh, front_view)
        second = rasterize(sphere_mesh, front_view)
        np.testing.assert_array_equal(first.depth, second.depth)
        np.testing.assert_array_equal(first.color, second.color)

    def test_perspective_correct_depth_on_tilted_plane(self, intrinsics):
        view = CameraView.orbit(30.0, 0.0, 2.5, intrinsics)
        rendered = rasterize(square(size=1.5), view)
        # every rendered pixel back-projects onto the z = 0 plane
        rays = view.pixel_rays()[rendered.mask] * rendered.depth[rendered.mask][:, None]
        world = view.pose.to_world(rays)
        np.testing.assert_allclose(world[:, 2], 0.0, atol=1e-9)


class TestRGBDView:
    def test_mask_must_match_depth(self, front_view):
        depth = np.zeros(front_view.shape)
        mask = np.zeros(front_view.shape, dtype=bool)
        mask[0, 0] = True
        with pytest.raises(InvalidArgumentError):
            RGBDView(np.zeros(front_view.shape + (3,)), depth, mask, front_view)

    def test_from_arrays_intersects_mask(self, front_view):
        depth = np.ones(front_view.shape)
        mask = np.zeros(front_view.shape, dtype=bool)
        mask[:4] = True
        view = RGBDView.from_arrays(np.zeros(front_view.shape + (3,)), depth, front_view, mask)
        assert view.mask.sum() == 4 * 64
        assert view.depth[10, 10] == 0.0


class TestNormals:
    def test_icosphere_normals_point_outward(self, sphere_mesh):
        result = mesh_vertex_normals(sphere_mesh)
        assert len(result.isolated) == 0
        dots = np.einsum("ij,ij->i", result.normals, sphere_mesh.vertices)
        assert dots.min() > 0.99

    def test_isolated_vertex_reported(self):
        mesh = TriangleMesh(np.array([[0.0, 0, 0], [1, 0, 0], [0, 1, 0], [5, 5, 5]]), np.array([[0, 1, 2]]))
        result = mesh_vertex_normals(mesh)
        assert list(result.isolated) == [3]
        np.testing.assert_array_equal(result.normals[3], 0.0)


class TestCorpus:
    @pytest.mark.parametrize("name", CORPUS_NAMES)
    def test_meshes_are_valid(self, name):
        mesh = synthetic_corpus(name)
        assert mesh.face_count > 0
        assert mesh.colors.min() >= 0.0 and mesh.colors.max() <= 1.0

    def test_unknown_name(self):
        with pytest.raises(InvalidArgumentError):
            synthetic_corpus("hoodie")

    def test_tee_sleeves(self):
        two = synthetic_corpus("tee", sleeves=2)
        one = synthetic_corpus("tee", sleeves=1)
        none = synthetic_corpus("tee", sleeves=0)
        assert none.face_count < one.face_count < two.face_count
        lo, hi = one.bbox()
        assert hi[0] == pytest.approx(0.95)
        assert lo[0] == pytest.approx(-0.35, abs=1e-6)
        assert two.bbox()[0][0] == pytest.approx(-0.95)

    def test_tee_sleeve_count_validated(self):
        with pytest.raises(InvalidArgumentError):
            synthetic_corpus("tee", sleeves=3)
