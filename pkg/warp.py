"""
Warp Module
Projects the evolving point cloud into a target camera with orientation culling
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from camera import CameraView
from cloud import PointCloud
from config import WARP_CONFIG
from error_handlers import InvalidArgumentError

logger = logging.getLogger(__name__)

NEIGHBOUR_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass(frozen=True, eq=False)
class PartialView:
    """Incomplete color/depth of the cloud seen from a camera.

    point_index holds the winning point per covered pixel, -1 for micro-filled
    and uncovered pixels.
    """

    color: np.ndarray
    depth: np.ndarray
    coverage: np.ndarray
    view: CameraView
    point_index: Optional[np.ndarray] = None

    def __post_init__(self):
        height, width = self.view.shape
        if self.color.shape != (height, width, 3) or self.depth.shape != (height, width):
            raise InvalidArgumentError("Partial view arrays must match the camera size")
        if self.coverage.shape != (height, width):
            raise InvalidArgumentError("Coverage must match the camera size")
        if np.any(self.coverage.astype(bool) != (self.depth > 0)):
            raise InvalidArgumentError("Coverage must be set exactly where depth is positive")
        if self.point_index is None:
            object.__setattr__(self, "point_index", np.full((height, width), -1, dtype=np.int64))

    @classmethod
    def empty(cls, view: CameraView) -> "PartialView":
        height, width = view.shape
        return cls(np.zeros((height, width, 3)), np.zeros((height, width)),
                   np.zeros((height, width), dtype=bool), view)

    @property
    def is_empty(self) -> bool:
        return not np.any(self.coverage)


def _micro_fill(color: np.ndarray, depth: np.ndarray, coverage: np.ndarray,
                min_neighbors: int) -> int:
    """Fill isolated gaps in place from the median of covered 8-neighbours."""
    height, width = coverage.shape
    padded = np.pad(coverage, 1)
    counts = sum(padded[1 + dy:1 + dy + height, 1 + dx:1 + dx + width].astype(np.int64)
                 for dy, dx in NEIGHBOUR_OFFSETS)
    rows, cols = np.nonzero(~coverage & (counts >= min_neighbors))
    if not len(rows):
        return 0

    padded_depth = np.pad(np.where(coverage, depth, np.nan), 1, constant_values=np.nan)
    padded_color = np.pad(np.where(coverage[..., None], color, np.nan), ((1, 1), (1, 1), (0, 0)),
                          constant_values=np.nan)
    neighbour_depth = np.stack([padded_depth[rows + 1 + dy, cols + 1 + dx] for dy, dx in NEIGHBOUR_OFFSETS], axis=1)
    neighbour_color = np.stack([padded_color[rows + 1 + dy, cols + 1 + dx] for dy, dx in NEIGHBOUR_OFFSETS], axis=1)
    depth[rows, cols] = np.nanmedian(neighbour_depth, axis=1)
    color[rows, cols] = np.nanmedian(neighbour_color, axis=1)
    coverage[rows, cols] = True
    return len(rows)


def project(pc: PointCloud, view: CameraView, cull: bool = True, micro_fill: bool = True,
            min_neighbors: int = WARP_CONFIG["microfill_min_neighbors"]) -> PartialView:
    """Nearest-pixel splat with z-test; ties keep the lower point index."""
    height, width = view.shape
    if not len(pc):
        return PartialView.empty(view)

    u, v, z = view.project(pc.positions)
    keep = np.isfinite(u) & np.isfinite(v) & (z > 0)
    if cull:
        toward_camera = view.center - pc.positions
        keep &= np.einsum("ij,ij->i", pc.orientations, toward_camera) > 0
    px = np.floor(u + 0.5)
    py = np.floor(v + 0.5)
    keep &= (px >= 0) & (px < width) & (py >= 0) & (py < height)

    index = np.nonzero(keep)[0]
    color = np.zeros((height, width, 3))
    depth = np.zeros((height, width))
    coverage = np.zeros((height, width), dtype=bool)
    point_index = np.full((height, width), -1, dtype=np.int64)
    if len(index):
        pixel = py[index].astype(np.int64) * width + px[index].astype(np.int64)
        order = np.lexsort((index, z[index], pixel))
        pixel_sorted = pixel[order]
        first = np.ones(len(order), dtype=bool)
        first[1:] = pixel_sorted[1:] != pixel_sorted[:-1]
        winner = index[order[first]]
        target = pixel_sorted[first]
        rows, cols = np.divmod(target, width)
        depth[rows, cols] = z[winner]
        color[rows, cols] = pc.colors[winner]
        coverage[rows, cols] = True
        point_index[rows, cols] = winner

    filled = _micro_fill(color, depth, coverage, min_neighbors) if micro_fill else 0
    logger.debug(f"Projected {len(index)} of {len(pc)} points, micro-filled {filled} pixels")
    return PartialView(color, depth, coverage, view, point_index)


def disk(radius: int) -> np.ndarray:
    offsets = np.arange(-radius, radius + 1)
    yy, xx = np.meshgrid(offsets, offsets, indexing="ij")
    return (yy * yy + xx * xx) <= radius * radius


def inpaint_region(partial: PartialView, completed_mask: np.ndarray,
                   border_radius: int = WARP_CONFIG["border_radius"]) -> np.ndarray:
    """Uncovered completed pixels, grown by a disk into the covered overlap."""
    completed_mask = np.asarray(completed_mask, dtype=bool)
    if completed_mask.shape != partial.coverage.shape:
        raise InvalidArgumentError("Completed mask must match the partial view size")
    region = completed_mask & ~partial.coverage
    if border_radius > 0 and np.any(region):
        region = ndimage.binary_dilation(region, structure=disk(border_radius))
    return region & completed_mask
