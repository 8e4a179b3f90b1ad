"""
Metrics Module
PSNR, SSIM, cross-view consistency, point-to-mesh Chamfer and the multi-view evaluation protocol
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Union

import numpy as np
from scipy.spatial import cKDTree
from skimage.metrics import structural_similarity

from camera import Intrinsics, evaluation_views
from cloud import PointCloud
from config import CAMERA_CONFIG, METRICS_CONFIG
from error_handlers import InvalidArgumentError
from performance_utils import perf_monitor
from raster import TriangleMesh, rasterize
from warp import PartialView

logger = logging.getLogger(__name__)

CANDIDATE_NEIGHBOURS = 16
DISTANCE_CHUNK = 65536


def _same_shape(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise InvalidArgumentError(f"Image shapes differ: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray, mask: Optional[np.ndarray] = None,
         cap: float = METRICS_CONFIG["psnr_cap_db"]) -> float:
    """Peak-1 PSNR in dB over the masked pixels, capped for identical inputs."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    diff = (a - b) ** 2
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not np.any(mask):
            raise InvalidArgumentError("PSNR mask is empty")
        diff = diff[mask]
    mse = float(np.mean(diff))
    if mse <= 0:
        return cap
    return min(cap, 10.0 * np.log10(1.0 / mse))


def ssim(a: np.ndarray, b: np.ndarray, mask: Optional[np.ndarray] = None) -> float:
    """Gaussian-window SSIM (sigma 1.5, K1 0.01, K2 0.03, L 1), channel-averaged."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    _same_shape(a, b)
    if min(a.shape[:2]) < 11:
        raise InvalidArgumentError(f"SSIM needs images of at least 11x11, got {a.shape[1]}x{a.shape[0]}")
    channel_axis = -1 if a.ndim == 3 else None
    score, local = structural_similarity(a, b, channel_axis=channel_axis, data_range=1.0,
                                         gaussian_weights=True, sigma=METRICS_CONFIG["ssim_sigma"],
                                         use_sample_covariance=False, full=True)
    if mask is None:
        return float(score)
    mask = np.asarray(mask, dtype=bool)
    if not np.any(mask):
        raise InvalidArgumentError("SSIM mask is empty")
    if local.ndim == 3:
        local = local.mean(axis=-1)
    return float(local[mask].mean())


def cvcs(image: np.ndarray, partial: PartialView) -> float:
    """Cross-view consistency: 1 - mean |I - I'| over the covered pixels."""
    image = np.asarray(image, dtype=np.float64)
    _same_shape(image, partial.color)
    coverage = partial.coverage
    if not np.any(coverage):
        raise InvalidArgumentError("CVCS needs a non-empty coverage mask")
    difference = np.abs(image - partial.color).mean(axis=-1)
    return float(1.0 - difference[coverage].sum() / coverage.sum())


# Chamfer ------------------------------------------------------------------------

def sample_surface(mesh: TriangleMesh, count: int, seed: int = METRICS_CONFIG["chamfer_seed"]) -> np.ndarray:
    """Area-uniform surface samples; the stream depends only on the mesh and seed."""
    areas = mesh.face_areas()
    total = areas.sum()
    if mesh.face_count == 0 or total <= 0:
        raise InvalidArgumentError("Cannot sample a mesh without area")
    rng = np.random.default_rng(seed)
    faces = rng.choice(mesh.face_count, size=count, p=areas / total)
    r1 = np.sqrt(rng.random(count))
    r2 = rng.random(count)
    tri = mesh.vertices[mesh.faces[faces]]
    return ((1.0 - r1)[:, None] * tri[:, 0]
            + (r1 * (1.0 - r2))[:, None] * tri[:, 1]
            + (r1 * r2)[:, None] * tri[:, 2])


def closest_point_on_triangles(p: np.ndarray, a: np.ndarray, b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Exact closest points, one triangle per query row (Voronoi-region tests)."""
    ab = b - a
    ac = c - a
    ap = p - a
    bp = p - b
    cp = p - c

    def dot(x, y):
        return np.einsum("ij,ij->i", x, y)

    d1, d2 = dot(ab, ap), dot(ac, ap)
    d3, d4 = dot(ab, bp), dot(ac, bp)
    d5, d6 = dot(ab, cp), dot(ac, cp)
    va = d3 * d6 - d5 * d4
    vb = d5 * d2 - d1 * d6
    vc = d1 * d4 - d3 * d2

    with np.errstate(divide="ignore", invalid="ignore"):
        on_ab = a + (d1 / (d1 - d3))[:, None] * ab
        on_ac = a + (d2 / (d2 - d6))[:, None] * ac
        bc_t = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        on_bc = b + bc_t[:, None] * (c - b)
        denom = 1.0 / (va + vb + vc)
        inside = a + (vb * denom)[:, None] * ab + (vc * denom)[:, None] * ac

    conditions = [
        (d1 <= 0) & (d2 <= 0),
        (d3 >= 0) & (d4 <= d3),
        (vc <= 0) & (d1 >= 0) & (d3 <= 0),
        (d6 >= 0) & (d5 <= d6),
        (vb <= 0) & (d2 >= 0) & (d6 <= 0),
        (va <= 0) & ((d4 - d3) >= 0) & ((d5 - d6) >= 0),
    ]
    choices = [a, b, on_ab, c, on_ac, on_bc]
    closest = np.select([cond[:, None] for cond in conditions], choices, default=inside)

    broken = ~np.all(np.isfinite(closest), axis=1)
    if np.any(broken):
        corners = np.stack([a[broken], b[broken], c[broken]], axis=1)
        nearest = np.argmin(np.linalg.norm(corners - p[broken, None], axis=2), axis=1)
        closest[broken] = corners[np.arange(len(nearest)), nearest]
    return closest


def _triangle_distances(points: np.ndarray, tri: np.ndarray, face_ids: np.ndarray) -> np.ndarray:
    a, b, c = tri[face_ids, 0], tri[face_ids, 1], tri[face_ids, 2]
    return np.linalg.norm(points - closest_point_on_triangles(points, a, b, c), axis=1)


def point_to_mesh_distance(points: np.ndarray, mesh: TriangleMesh) -> np.ndarray:
    """Exact unsigned distance from each point to the nearest triangle."""
    if mesh.face_count == 0:
        raise InvalidArgumentError("Distance to an empty mesh is undefined")
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    tri = mesh.vertices[mesh.faces]
    centroids = tri.mean(axis=1)
    reach = float(np.linalg.norm(tri - centroids[:, None], axis=2).max())
    tree = cKDTree(centroids)
    k = min(CANDIDATE_NEIGHBOURS, mesh.face_count)
    result = np.empty(len(points))

    for start in range(0, len(points), DISTANCE_CHUNK):
        chunk = points[start:start + DISTANCE_CHUNK]
        centroid_distance, candidates = tree.query(chunk, k=k)
        centroid_distance = centroid_distance.reshape(len(chunk), k)
        candidates = candidates.reshape(len(chunk), k)
        repeated = np.repeat(chunk, k, axis=0)
        distances = _triangle_distances(repeated, tri, candidates.reshape(-1)).reshape(len(chunk), k)
        best = distances.min(axis=1)
        # faces outside the k nearest centroids are at least (k-th centroid distance - reach) away
        unsure = np.nonzero(best > centroid_distance[:, -1] - reach)[0] if k < mesh.face_count else []
        for i in unsure:
            faces = np.asarray(tree.query_ball_point(chunk[i], best[i] + reach), dtype=np.int64)
            if len(faces):
                exact = _triangle_distances(np.repeat(chunk[i:i + 1], len(faces), axis=0), tri, faces)
                best[i] = min(best[i], float(exact.min()))
        result[start:start + len(chunk)] = best
    return result


def _surface_points(surface: Union[TriangleMesh, PointCloud], samples: int, seed: int) -> np.ndarray:
    if isinstance(surface, PointCloud):
        if not len(surface):
            raise InvalidArgumentError("Chamfer input cloud is empty")
        return surface.positions
    return sample_surface(surface, samples, seed)


def chamfer_bidirectional(a: Union[TriangleMesh, PointCloud], b: TriangleMesh,
                          samples: int = METRICS_CONFIG["chamfer_samples"],
                          seed: int = METRICS_CONFIG["chamfer_seed"]) -> float:
    """Mean of the two directed point-to-mesh distances (clouds are used as-is)."""
    if (isinstance(a, TriangleMesh) and a.face_count == 0) or b.face_count == 0:
        raise InvalidArgumentError("Chamfer inputs must be non-empty")
    a_points = _surface_points(a, samples, seed)
    b_points = sample_surface(b, samples, seed)
    forward = float(point_to_mesh_distance(a_points, b).mean())
    if isinstance(a, PointCloud):
        backward = float(cKDTree(a_points).query(b_points)[0].mean())
    else:
        backward = float(point_to_mesh_distance(b_points, a).mean())
    return 0.5 * (forward + backward)


def chamfer_normalized(a: Union[TriangleMesh, PointCloud], gt: TriangleMesh,
                       samples: int = METRICS_CONFIG["chamfer_samples"],
                       seed: int = METRICS_CONFIG["chamfer_seed"]) -> float:
    """Chamfer with both inputs scaled so the ground truth has a unit bounding-box diagonal."""
    diagonal = gt.bbox_diagonal()
    if diagonal <= 0:
        raise InvalidArgumentError("Ground-truth mesh has a degenerate bounding box")
    scale = 1.0 / diagonal
    if isinstance(a, PointCloud):
        scaled = PointCloud(a.positions * scale, a.colors, a.orientations, a.steps)
    else:
        scaled = a.transformed(scale)
    return chamfer_bidirectional(scaled, gt.transformed(scale), samples, seed)


# Evaluation protocol -------------------------------------------------------------

@dataclass
class ViewScore:
    azimuth: float
    elevation: float
    psnr_db: Optional[float]
    ssim: Optional[float]

    def to_dict(self) -> Dict[str, Any]:
        return {"azimuth": self.azimuth, "elevation": self.elevation,
                "psnr_db": self.psnr_db, "ssim": self.ssim}


@dataclass
class EvalReport:
    protocol: str
    views: List[ViewScore]
    chamfer: float
    normalization_scale: float
    cvcs: List[float] = field(default_factory=list)
    lpips: Optional[float] = None

    @property
    def mean_psnr(self) -> Optional[float]:
        values = [v.psnr_db for v in self.views if v.psnr_db is not None]
        return float(np.mean(values)) if values else None

    @property
    def mean_ssim(self) -> Optional[float]:
        values = [v.ssim for v in self.views if v.ssim is not None]
        return float(np.mean(values)) if values else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "protocol": self.protocol,
            "views": [view.to_dict() for view in self.views],
            "mean_psnr_db": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
            "chamfer": self.chamfer,
            "normalization": {"gt_bbox_diagonal_scale": self.normalization_scale},
            "cvcs": list(self.cvcs),
            "lpips": self.lpips,
        }

    def csv_rows(self) -> List[List[Any]]:
        rows: List[List[Any]] = [["azimuth", "elevation", "psnr_db", "ssim"]]
        rows += [[v.azimuth, v.elevation, v.psnr_db, v.ssim] for v in self.views]
        return rows


@perf_monitor.time_function("eval_protocol")
def eval_protocol(gt: TriangleMesh, recon: TriangleMesh, radius: float = CAMERA_CONFIG["radius"],
                  resolution: int = CAMERA_CONFIG["resolution"], protocol: str = "mesh12",
                  fov_deg: float = CAMERA_CONFIG["fov_deg"],
                  samples: int = METRICS_CONFIG["chamfer_samples"],
                  seed: int = METRICS_CONFIG["chamfer_seed"]) -> EvalReport:
    """Render both meshes from the protocol cameras and score them; Chamfer at unit GT diagonal."""
    intrinsics = Intrinsics.from_fov(resolution, fov_deg=fov_deg)
    scores: List[ViewScore] = []
    for view in evaluation_views(radius, intrinsics, protocol):
        expected = rasterize(gt, view)
        actual = rasterize(recon, view)
        union = expected.mask | actual.mask
        if np.any(union):
            scores.append(ViewScore(view.azimuth_deg, view.elevation_deg,
                                    psnr(actual.color, expected.color, union),
                                    ssim(actual.color, expected.color, union)))
        else:
            scores.append(ViewScore(view.azimuth_deg, view.elevation_deg, None, None))

    distance = chamfer_normalized(recon, gt, samples, seed)
    report = EvalReport(protocol, scores, distance, 1.0 / gt.bbox_diagonal())
    logger.info(f"Evaluation ({protocol}): PSNR {report.mean_psnr}, SSIM {report.mean_ssim}, Chamfer {distance:.5f}")
    return report
