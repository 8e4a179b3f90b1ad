"""
Robustness Module
Open-hole detection and far-depth clipping against error accumulation
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np
from scipy import ndimage

from config import ROBUST_CONFIG
from error_handlers import InvalidArgumentError

logger = logging.getLogger(__name__)

FOUR_CONNECTED = ndimage.generate_binary_structure(2, 1)
EIGHT_CONNECTED = ndimage.generate_binary_structure(2, 2)


@dataclass
class HoleRegion:
    pixel_count: int
    mean_depth: float
    boundary_fraction: float
    flagged: bool

    def to_dict(self) -> Dict[str, Any]:
        return {
            "pixel_count": self.pixel_count,
            "mean_depth": self.mean_depth,
            "boundary_fraction": self.boundary_fraction,
            "flagged": self.flagged,
        }


@dataclass
class HoleReport:
    hole_mask: np.ndarray
    regions: List[HoleRegion] = field(default_factory=list)

    @property
    def flagged_count(self) -> int:
        return sum(1 for region in self.regions if region.flagged)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "hole_pixels": int(self.hole_mask.sum()),
            "flagged_regions": self.flagged_count,
            "regions": [region.to_dict() for region in self.regions],
        }


def depth_edges(depth: np.ndarray, mask: np.ndarray, threshold: float) -> np.ndarray:
    """Foreground pixels whose largest jump to a foreground 4-neighbour exceeds threshold."""
    height, width = depth.shape
    padded_depth = np.pad(np.where(mask, depth, 0.0), 1)
    padded_mask = np.pad(mask, 1)
    largest = np.zeros((height, width))
    for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
        neighbour = padded_depth[1 + dy:1 + dy + height, 1 + dx:1 + dx + width]
        present = padded_mask[1 + dy:1 + dy + height, 1 + dx:1 + dx + width]
        largest = np.maximum(largest, np.where(present, np.abs(neighbour - depth), 0.0))
    return mask & (largest > threshold)


def detect_open_holes(depth: np.ndarray, mask: np.ndarray,
                      epsilon: float = ROBUST_CONFIG["hole_epsilon"],
                      edge_fraction: float = ROBUST_CONFIG["edge_fraction"]) -> HoleReport:
    """Flag depth regions that sit behind most of their boundary.

    A region's boundary ring surrounds the region together with the edge
    pixels on its own side of the jump. Background in the ring counts as
    farther than the region.
    """
    depth = np.asarray(depth, dtype=np.float64)
    mask = np.asarray(mask, dtype=bool)
    if depth.shape != mask.shape:
        raise InvalidArgumentError("Depth and mask must have the same shape")
    if not 0.0 < epsilon <= 1.0:
        raise InvalidArgumentError(f"epsilon must lie in (0, 1], got {epsilon}")
    hole_mask = np.zeros_like(mask)
    if not np.any(mask):
        return HoleReport(hole_mask)

    values = depth[mask]
    tau = edge_fraction * float(values.max() - values.min())
    edges = depth_edges(depth, mask, tau)
    labels, count = ndimage.label(mask & ~edges, structure=FOUR_CONNECTED)
    regions: List[HoleRegion] = []
    height, width = mask.shape
    for index, box in enumerate(ndimage.find_objects(labels), start=1):
        if box is None:
            continue
        rows = slice(max(box[0].start - 3, 0), min(box[0].stop + 3, height))
        cols = slice(max(box[1].start - 3, 0), min(box[1].stop + 3, width))
        region = labels[rows, cols] == index
        local_depth = depth[rows, cols]
        local_mask = mask[rows, cols]
        mean_depth = float(local_depth[region].mean())

        near = ndimage.binary_dilation(region, structure=EIGHT_CONNECTED)
        own_edges = near & edges[rows, cols] & (np.abs(local_depth - mean_depth) <= tau)
        grown = region | own_edges
        ring = ndimage.binary_dilation(grown, structure=EIGHT_CONNECTED) & ~grown
        ring_size = int(ring.sum())
        closer = int((ring & local_mask & (local_depth < mean_depth)).sum())
        fraction = closer / ring_size if ring_size else 0.0
        flagged = fraction > epsilon
        if flagged:
            hole_mask[rows, cols] |= grown
        regions.append(HoleRegion(int(region.sum()), mean_depth, fraction, flagged))

    report = HoleReport(hole_mask & mask, regions)
    if report.flagged_count:
        logger.debug(f"Open-hole detection flagged {report.flagged_count} of {count} regions")
    return report


def clip_far_depth(depth: np.ndarray, inpaint_mask: np.ndarray,
                   quantile: float = ROBUST_CONFIG["far_clip_quantile"]) -> np.ndarray:
    """Keep inpaint pixels no deeper than the region's depth quantile (median by default)."""
    inpaint_mask = np.asarray(inpaint_mask, dtype=bool)
    if depth.shape != inpaint_mask.shape:
        raise InvalidArgumentError("Depth and inpaint mask must have the same shape")
    if not 0.0 <= quantile <= 1.0:
        raise InvalidArgumentError(f"Quantile must lie in [0, 1], got {quantile}")
    region = inpaint_mask & (depth > 0)
    if not np.any(region):
        return np.zeros_like(inpaint_mask)
    threshold = float(np.quantile(depth[region], quantile))
    return region & (depth <= threshold)
