"""
Point Cloud Module
Oriented colored clouds: unprojection, depth normals, merging and outlier removal
"""

import logging
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional, Tuple

import numpy as np
from scipy.spatial import cKDTree

from config import CLOUD_CONFIG
from error_handlers import InvalidArgumentError
from raster import RGBDView

logger = logging.getLogger(__name__)

UNIT_TOLERANCE = 1e-6


class OrientedPoint(NamedTuple):
    position: np.ndarray
    color: np.ndarray
    v: np.ndarray
    step: int


def _readonly(values: np.ndarray) -> np.ndarray:
    values = np.array(values, copy=True)
    values.setflags(write=False)
    return values


@dataclass(frozen=True, eq=False)
class PointCloud:
    """Struct-of-arrays point cloud; arrays are read-only after construction."""

    positions: np.ndarray
    colors: np.ndarray
    orientations: np.ndarray
    steps: np.ndarray

    def __post_init__(self):
        positions = np.asarray(self.positions, dtype=np.float64).reshape(-1, 3)
        n = len(positions)
        colors = np.asarray(self.colors, dtype=np.float64).reshape(-1, 3)
        orientations = np.asarray(self.orientations, dtype=np.float64).reshape(-1, 3)
        steps = np.asarray(self.steps, dtype=np.int64).reshape(-1)
        if steps.size == 1 and n != 1:
            steps = np.full(n, int(steps[0]), dtype=np.int64)
        if not (len(colors) == len(orientations) == len(steps) == n):
            raise InvalidArgumentError("Point cloud arrays must have equal length")
        if n:
            if not (np.all(np.isfinite(positions)) and np.all(np.isfinite(orientations))):
                raise InvalidArgumentError("Point positions and orientations must be finite")
            lengths = np.linalg.norm(orientations, axis=1)
            if np.any(np.abs(lengths - 1.0) > UNIT_TOLERANCE):
                raise InvalidArgumentError("Point orientations must be unit vectors")
            if steps.min() < 0:
                raise InvalidArgumentError("Point step indices must be >= 0")
        object.__setattr__(self, "positions", _readonly(positions))
        object.__setattr__(self, "colors", _readonly(colors))
        object.__setattr__(self, "orientations", _readonly(orientations))
        object.__setattr__(self, "steps", _readonly(steps))

    @classmethod
    def empty(cls) -> "PointCloud":
        return cls(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)), np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return len(self.positions)

    def __getitem__(self, index: int) -> OrientedPoint:
        return OrientedPoint(self.positions[index], self.colors[index], self.orientations[index],
                             int(self.steps[index]))

    @cached_property
    def bbox(self) -> Tuple[np.ndarray, np.ndarray]:
        if not len(self):
            return np.zeros(3), np.zeros(3)
        return self.positions.min(axis=0), self.positions.max(axis=0)

    def bbox_diagonal(self) -> float:
        lo, hi = self.bbox
        return float(np.linalg.norm(hi - lo))

    def subset(self, keep: np.ndarray) -> "PointCloud":
        return PointCloud(self.positions[keep], self.colors[keep], self.orientations[keep], self.steps[keep])

    def same_as(self, other: "PointCloud") -> bool:
        return (len(self) == len(other)
                and np.array_equal(self.positions, other.positions)
                and np.array_equal(self.colors, other.colors)
                and np.array_equal(self.orientations, other.orientations)
                and np.array_equal(self.steps, other.steps))


def _camera_points(rgbd: RGBDView) -> np.ndarray:
    return rgbd.view.pixel_rays() * rgbd.depth[..., None]


def _neighbour_difference(points: np.ndarray, depth: np.ndarray, mask: np.ndarray,
                          axis: int, threshold: float) -> Tuple[np.ndarray, np.ndarray]:
    """Derivative of camera points along one image axis.

    Central where both neighbours continue the surface, one-sided otherwise.
    """
    pad = [(0, 0)] * 2
    pad[axis] = (1, 1)
    p = np.pad(points, pad + [(0, 0)])
    d = np.pad(depth, pad)
    m = np.pad(mask, pad)
    size = points.shape[axis]
    centre = [slice(None)] * 2
    before = [slice(None)] * 2
    after = [slice(None)] * 2
    centre[axis] = slice(1, size + 1)
    before[axis] = slice(0, size)
    after[axis] = slice(2, size + 2)
    centre, before, after = tuple(centre), tuple(before), tuple(after)

    ok_next = m[after] & mask & (np.abs(d[after] - depth) <= threshold)
    ok_prev = m[before] & mask & (np.abs(depth - d[before]) <= threshold)
    forward = p[after] - p[centre]
    backward = p[centre] - p[before]
    diff = np.where((ok_next & ok_prev)[..., None], 0.5 * (forward + backward),
                    np.where(ok_next[..., None], forward, backward))
    return diff, ok_next | ok_prev


def normals_from_depth(rgbd: RGBDView, discontinuity_fraction: Optional[float] = None) -> np.ndarray:
    """World-space unit normals per masked pixel, facing the camera; zero elsewhere."""
    height, width = rgbd.view.shape
    normals = np.zeros((height, width, 3))
    mask = rgbd.mask
    if not np.any(mask):
        return normals
    fraction = CLOUD_CONFIG["discontinuity_fraction"] if discontinuity_fraction is None else discontinuity_fraction
    threshold = fraction * float(np.median(rgbd.depth[mask]))

    points = _camera_points(rgbd)
    du, ok_u = _neighbour_difference(points, rgbd.depth, mask, axis=1, threshold=threshold)
    dv, ok_v = _neighbour_difference(points, rgbd.depth, mask, axis=0, threshold=threshold)
    n = np.cross(du, dv)
    to_camera = -points
    facing = np.sum(n * to_camera, axis=-1)
    n = np.where((facing < 0)[..., None], -n, n)

    length = np.linalg.norm(n, axis=-1)
    distance = np.linalg.norm(to_camera, axis=-1)
    usable = mask & ok_u & ok_v & (length > 0)
    # grazing normals would fail culling at their own camera
    usable &= np.abs(facing) > 1e-6 * length * distance
    fallback = mask & ~usable
    normals[usable] = n[usable] / length[usable, None]
    normals[fallback] = to_camera[fallback] / distance[fallback, None]
    if np.any(fallback):
        logger.debug(f"{int(fallback.sum())} pixels fell back to the viewing direction")
    normals[mask] = rgbd.view.pose.rotate_to_world(normals[mask])
    return normals


def unproject(rgbd: RGBDView, select: Optional[np.ndarray] = None) -> PointCloud:
    """One point per masked pixel, in row-major pixel order.

    ``select`` restricts which pixels become points; normals are still estimated
    over the whole mask.
    """
    pixels = rgbd.mask if select is None else (rgbd.mask & np.asarray(select, dtype=bool))
    if not np.any(pixels):
        return PointCloud.empty()
    normals = normals_from_depth(rgbd)
    camera_points = _camera_points(rgbd)[pixels]
    positions = rgbd.view.pose.to_world(camera_points)
    orientations = normals[pixels]
    orientations /= np.linalg.norm(orientations, axis=1, keepdims=True)
    steps = np.full(len(positions), rgbd.view.step, dtype=np.int64)
    return PointCloud(positions, rgbd.color[pixels], orientations, steps)


def merge(base: PointCloud, addition: PointCloud) -> PointCloud:
    if not len(addition):
        return base
    if not len(base):
        return addition
    return PointCloud(np.concatenate([base.positions, addition.positions]),
                      np.concatenate([base.colors, addition.colors]),
                      np.concatenate([base.orientations, addition.orientations]),
                      np.concatenate([base.steps, addition.steps]))


def outlier_mask(positions: np.ndarray, k: int = CLOUD_CONFIG["outlier_k"],
                 sigma_mult: float = CLOUD_CONFIG["outlier_sigma_mult"],
                 floor_ratio: float = CLOUD_CONFIG["outlier_floor_ratio"]) -> np.ndarray:
    """True for points to keep under the mean k-NN distance rule.

    A point goes only when its mean distance exceeds both mean + sigma_mult * std
    and floor_ratio * median. The floor keeps the boundary points of regular
    samplings.
    """
    if k < 1:
        raise InvalidArgumentError(f"k must be >= 1, got {k}")
    n = len(positions)
    if n <= k:
        return np.ones(n, dtype=bool)
    tree = cKDTree(positions)
    distances, _ = tree.query(positions, k=k + 1)
    mean_distance = distances[:, 1:].mean(axis=1)
    threshold = max(mean_distance.mean() + sigma_mult * mean_distance.std(),
                    floor_ratio * np.median(mean_distance))
    return mean_distance <= threshold


def remove_statistical_outliers(pc: PointCloud, k: int = CLOUD_CONFIG["outlier_k"],
                                sigma_mult: float = CLOUD_CONFIG["outlier_sigma_mult"],
                                floor_ratio: float = CLOUD_CONFIG["outlier_floor_ratio"]) -> PointCloud:
    keep = outlier_mask(pc.positions, k, sigma_mult, floor_ratio)
    removed = int((~keep).sum())
    if not removed:
        return pc
    logger.debug(f"Outlier removal dropped {removed} of {len(pc)} points")
    return pc.subset(keep)
