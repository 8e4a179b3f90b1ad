"""
Meshing Module
Point cloud to mesh: normal-signed SDF, marching cubes, density trim, cleanup and smoothing
"""

import logging
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components
from scipy.spatial import cKDTree
from skimage import measure

from cloud import PointCloud
from config import MESHING_CONFIG
from error_handlers import InvalidArgumentError
from performance_utils import perf_monitor
from raster import TriangleMesh

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ScalarGrid:
    """Signed distance samples on voxel corners; positive is outside."""

    origin: np.ndarray
    voxel: float
    values: np.ndarray
    support: np.ndarray

    def __post_init__(self):
        if self.values.ndim != 3 or min(self.values.shape) < 2:
            raise InvalidArgumentError(f"Grid needs at least 2 corners per axis, got {self.values.shape}")
        if self.voxel <= 0:
            raise InvalidArgumentError(f"Voxel size must be positive, got {self.voxel}")
        if self.support.shape != self.values.shape:
            raise InvalidArgumentError("Support and values must have the same shape")

    @property
    def dims(self):
        return self.values.shape

    def corner_positions(self) -> np.ndarray:
        axes = [self.origin[i] + self.voxel * np.arange(n) for i, n in enumerate(self.dims)]
        xx, yy, zz = np.meshgrid(*axes, indexing="ij")
        return np.stack([xx, yy, zz], axis=-1)


@perf_monitor.time_function("build_sdf")
def build_sdf(pc: PointCloud, resolution: int = MESHING_CONFIG["resolution"],
              padding: float = MESHING_CONFIG["padding"], k: int = MESHING_CONFIG["k"],
              sigma_voxels: float = MESHING_CONFIG["sigma_voxels"],
              support_voxels: float = MESHING_CONFIG["support_voxels"]) -> ScalarGrid:
    """Gaussian-weighted mean of dot(p - x_j, v_j) over the k nearest points of each corner."""
    if not len(pc):
        raise InvalidArgumentError("Cannot build a distance field from an empty cloud")
    if resolution < 2:
        raise InvalidArgumentError(f"Resolution must be at least 2, got {resolution}")
    lo, hi = pc.bbox
    extent = float((hi - lo).max())
    if extent <= 0:
        extent = 1.0
    margin = padding * extent
    voxel = (extent + 2.0 * margin) / (resolution - 1)
    origin = lo - margin
    dims = tuple(int(n) for n in np.maximum(np.ceil((hi + margin - origin) / voxel - 1e-9).astype(int) + 1, 2))

    values = np.full(dims, support_voxels * voxel)
    support = np.zeros(dims)
    grid = ScalarGrid(origin, voxel, values, support)
    corners = grid.corner_positions().reshape(-1, 3)

    tree = cKDTree(pc.positions)
    nearest, _ = tree.query(corners, k=1, distance_upper_bound=support_voxels * voxel)
    supported = np.nonzero(np.isfinite(nearest))[0]
    if len(supported):
        k_eff = min(k, len(pc))
        distances, index = tree.query(corners[supported], k=k_eff)
        distances = distances.reshape(len(supported), k_eff)
        index = index.reshape(len(supported), k_eff)
        sigma = sigma_voxels * voxel
        weights = np.exp(-distances ** 2 / (2.0 * sigma * sigma))
        offsets = corners[supported, None, :] - pc.positions[index]
        signed = np.einsum("nkc,nkc->nk", offsets, pc.orientations[index])
        total = weights.sum(axis=1)
        flat_values = values.reshape(-1)
        flat_support = support.reshape(-1)
        flat_values[supported] = (weights * signed).sum(axis=1) / total
        flat_support[supported] = total
    logger.debug(f"SDF grid {dims} with voxel {voxel:.5f}: {len(supported)} supported corners")
    return grid


def extract_mesh(grid: ScalarGrid) -> TriangleMesh:
    """Zero level set over cubes whose eight corners all carry support."""
    supported = grid.support > 0
    cubes = (supported[:-1, :-1, :-1] & supported[1:, :-1, :-1] & supported[:-1, 1:, :-1]
             & supported[:-1, :-1, 1:] & supported[1:, 1:, :-1] & supported[1:, :-1, 1:]
             & supported[:-1, 1:, 1:] & supported[1:, 1:, 1:])
    empty = TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    if not np.any(cubes):
        return empty
    used = grid.values[supported]
    if used.min() > 0 or used.max() < 0:
        return empty
    mask = np.zeros(grid.dims, dtype=bool)
    mask[:-1, :-1, :-1] = cubes
    try:
        vertices, faces, _, _ = measure.marching_cubes(grid.values, level=0.0,
                                                       spacing=(grid.voxel,) * 3,
                                                       gradient_direction="ascent",
                                                       allow_degenerate=False, mask=mask)
    except (ValueError, RuntimeError) as e:
        logger.debug(f"Marching cubes found no surface: {e}")
        return empty
    return TriangleMesh(vertices.astype(np.float64) + grid.origin, faces.astype(np.int64))


def _vertex_adjacency(faces: np.ndarray, count: int) -> sparse.csr_matrix:
    rows = np.concatenate([faces[:, 0], faces[:, 1], faces[:, 2], faces[:, 1], faces[:, 2], faces[:, 0]])
    cols = np.concatenate([faces[:, 1], faces[:, 2], faces[:, 0], faces[:, 0], faces[:, 1], faces[:, 2]])
    adjacency = sparse.coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(count, count)).tocsr()
    adjacency.data[:] = 1.0
    return adjacency


def laplacian_smooth(vertices: np.ndarray, faces: np.ndarray,
                     iterations: int = MESHING_CONFIG["smooth_iterations"],
                     lam: float = MESHING_CONFIG["smooth_lambda"]) -> np.ndarray:
    """Uniform umbrella smoothing; vertices without neighbours stay put."""
    if not len(faces) or iterations <= 0:
        return vertices.copy()
    adjacency = _vertex_adjacency(faces, len(vertices))
    degree = np.asarray(adjacency.sum(axis=1)).reshape(-1)
    has_neighbours = degree > 0
    smoothed = vertices.copy()
    for _ in range(iterations):
        average = adjacency @ smoothed
        average[has_neighbours] /= degree[has_neighbours, None]
        average[~has_neighbours] = smoothed[~has_neighbours]
        smoothed = smoothed + lam * (average - smoothed)
    return smoothed


def face_components(mesh: TriangleMesh) -> np.ndarray:
    """Component label per face; faces sharing a vertex are connected."""
    if not mesh.face_count:
        return np.zeros(0, dtype=np.int64)
    adjacency = _vertex_adjacency(mesh.faces, mesh.vertex_count)
    _, labels = connected_components(adjacency, directed=False)
    return labels[mesh.faces[:, 0]]


@perf_monitor.time_function("trim_and_clean")
def trim_and_clean(mesh: TriangleMesh, pc: PointCloud, voxel: float,
                   trim_voxels: float = MESHING_CONFIG["trim_voxels"],
                   keep_components: str = MESHING_CONFIG["keep_components"],
                   min_component_fraction: float = MESHING_CONFIG["min_component_fraction"],
                   iterations: int = MESHING_CONFIG["smooth_iterations"],
                   lam: float = MESHING_CONFIG["smooth_lambda"]) -> TriangleMesh:
    """Density trim, floater removal, Laplacian smoothing and nearest-point vertex colors."""
    if not mesh.face_count or not len(pc):
        return TriangleMesh(np.zeros((0, 3)), np.zeros((0, 3), dtype=np.int64))
    tree = cKDTree(pc.positions)

    centroids = mesh.vertices[mesh.faces].mean(axis=1)
    distance, _ = tree.query(centroids)
    dense = distance <= trim_voxels * voxel
    trimmed = int((~dense).sum())
    mesh = mesh.subset_faces(dense)
    if not mesh.face_count:
        return mesh

    labels = face_components(mesh)
    sizes = np.bincount(labels)
    if keep_components == "largest":
        keep = labels == int(np.argmax(sizes))
    elif keep_components == "fraction":
        keep = sizes[labels] >= min_component_fraction * mesh.face_count
    else:
        raise InvalidArgumentError(f"Unknown component policy: {keep_components}")
    dropped = int((~keep).sum())
    mesh = mesh.subset_faces(keep)
    logger.debug(f"Trim removed {trimmed} faces, cleanup removed {dropped} floating faces")

    vertices = laplacian_smooth(mesh.vertices, mesh.faces, iterations, lam)
    _, nearest = tree.query(vertices)
    return TriangleMesh(vertices, mesh.faces, pc.colors[nearest])


def mesh_from_cloud(pc: PointCloud, resolution: int = MESHING_CONFIG["resolution"],
                    keep_components: str = MESHING_CONFIG["keep_components"]) -> TriangleMesh:
    grid = build_sdf(pc, resolution)
    raw = extract_mesh(grid)
    mesh = trim_and_clean(raw, pc, grid.voxel, keep_components=keep_components)
    logger.info(f"Meshed {len(pc)} points into {mesh.vertex_count} vertices / {mesh.face_count} faces")
    return mesh


# Topology helpers -----------------------------------------------------------------

def edge_face_counts(faces: np.ndarray) -> np.ndarray:
    """(E, 3) rows of (v_min, v_max, number of faces using the edge)."""
    if not len(faces):
        return np.zeros((0, 3), dtype=np.int64)
    edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    edges = np.sort(edges, axis=1)
    unique, counts = np.unique(edges, axis=0, return_counts=True)
    return np.column_stack([unique, counts])


def is_closed(mesh: TriangleMesh) -> bool:
    counts = edge_face_counts(mesh.faces)
    return bool(len(counts)) and bool(np.all(counts[:, 2] == 2))


def boundary_loop_count(mesh: TriangleMesh) -> int:
    """Connected components of the boundary-edge graph."""
    counts = edge_face_counts(mesh.faces)
    boundary = counts[counts[:, 2] == 1, :2] if len(counts) else counts[:, :2]
    if not len(boundary):
        return 0
    used, remapped = np.unique(boundary, return_inverse=True)
    remapped = remapped.reshape(-1, 2)
    graph = sparse.coo_matrix((np.ones(len(remapped)), (remapped[:, 0], remapped[:, 1])),
                              shape=(len(used), len(used)))
    count, _ = connected_components(graph, directed=False)
    return int(count)
