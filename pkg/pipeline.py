"""
Pipeline Module
Progressive reconstruction loop and single-view editing over the geometry modules
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from camera import CameraView, Intrinsics, Trajectory, build_trajectory, wrap_azimuth
from cloud import PointCloud, merge, remove_statistical_outliers, unproject
from complete import (AlignmentResult, ContractCheck, DepthCompleter, DepthCompletionRequest,
                      ImageCompleter, ImageCompletionRequest, align_inpainted_depth,
                      check_depth_contract, check_image_contract)
from config import BACKEND_CONFIG, ReconstructionConfig
from error_handlers import ContractViolationError, InvalidArgumentError
from logging_config import viewloom_logger
from metrics import cvcs
from performance_utils import perf_monitor
from raster import RGBDView
from robust import HoleReport, clip_far_depth, detect_open_holes
from warp import PartialView, disk, inpaint_region, project

logger = logging.getLogger(__name__)

EDIT_MODES = ("surface", "part")
EDIT_THICKNESS_FRACTION = 0.03
FOOTPRINT_RADIUS = 2


@dataclass
class StepRecord:
    """Audit entry for one view of the loop."""

    step: int
    role: str
    view: CameraView
    partial: Optional[PartialView]
    completed_color: np.ndarray
    foreground: np.ndarray
    depth: np.ndarray
    inpaint_mask: np.ndarray
    hole_mask: np.ndarray
    points_added: int
    points_total: int
    contract: Dict[str, ContractCheck] = field(default_factory=dict)
    alignment: Optional[AlignmentResult] = None
    holes: Optional[HoleReport] = None
    far_clipped: bool = False
    outliers_removed: int = 0
    cvcs: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "step": self.step,
            "role": self.role,
            "camera": self.view.to_dict(),
            "covered_pixels": int(self.partial.coverage.sum()) if self.partial is not None else 0,
            "foreground_pixels": int(self.foreground.sum()),
            "inpaint_pixels": int(self.inpaint_mask.sum()),
            "hole_pixels": int(self.hole_mask.sum()),
            "points_added": self.points_added,
            "points_total": self.points_total,
            "contract": {name: check.to_dict() for name, check in sorted(self.contract.items())},
            "alignment": self.alignment.to_dict() if self.alignment is not None else None,
            "holes": self.holes.to_dict() if self.holes is not None else None,
            "far_clipped": self.far_clipped,
            "outliers_removed": self.outliers_removed,
            "cvcs": self.cvcs,
        }


class ReconstructionResult(NamedTuple):
    cloud: PointCloud
    records: List[StepRecord]


def audit_dict(records: List[StepRecord], config: ReconstructionConfig) -> Dict[str, Any]:
    """Deterministic audit: step records plus the loop-closure residual."""
    closure = [r for r in records if r.role == "main" and r.view.azimuth_deg == 180.0
               and r.alignment is not None]
    return {
        "config": config.to_dict(),
        "steps": [record.to_dict() for record in records],
        "closure_residual": closure[-1].alignment.residual if closure else None,
    }


def run_trajectory(config: ReconstructionConfig) -> Trajectory:
    intrinsics = Intrinsics.from_fov(config.resolution, fov_deg=config.fov_deg)
    return build_trajectory(config.trajectory, config.degree_deg, config.radius, intrinsics,
                            config.positive_first, config.inpaint_count, config.seed)


class Reconstructor:
    """Runs the project, complete, align and merge loop with injected completers."""

    def __init__(self, image_completer: ImageCompleter, depth_completer: DepthCompleter,
                 config: Optional[ReconstructionConfig] = None):
        self.image_completer = image_completer
        self.depth_completer = depth_completer
        self.config = config or ReconstructionConfig()
        self.tolerance_cap = BACKEND_CONFIG["remote_tolerance_cap"]

    # contract plumbing ---------------------------------------------------------

    def _violation(self, check: ContractCheck, what: str, step: int, records: List[StepRecord]):
        message = f"{what} contract violated at step {step}: {check.message}"
        logger.error(message)
        raise ContractViolationError(message, records)

    def self_test(self, anchor_color: np.ndarray, anchor_mask: np.ndarray, anchor_view: CameraView) -> ContractCheck:
        """Ask the image completer to complete an already complete anchor."""
        full = PartialView(anchor_color, np.where(anchor_mask, 1.0, 0.0), anchor_mask, anchor_view)
        request = ImageCompletionRequest.from_partial(anchor_color, anchor_mask, anchor_view, full)
        check = check_image_contract(request, self.image_completer.complete_image(request), self.tolerance_cap)
        if not check.passed:
            self._violation(check, "Startup self-test", 0, [])
        return check

    def _anchor_depth(self, color: np.ndarray, mask: np.ndarray, view: CameraView,
                      condition: Optional[PartialView], records: List[StepRecord]) -> Tuple[np.ndarray, ContractCheck]:
        if condition is None:
            request = DepthCompletionRequest.unconditioned(color, mask, view)
        else:
            request = DepthCompletionRequest(color, mask, condition.depth, condition.coverage, view)
        depth = self.depth_completer.complete_depth(request)
        check = check_depth_contract(request, depth, self.depth_completer.depth_tolerance)
        if not check.passed:
            self._violation(check, "Depth", view.step, records)
        return depth, check

    # the loop ------------------------------------------------------------------

    @staticmethod
    def _is_clip_step(view: CameraView, role: str, clip_azimuths: Sequence[float]) -> bool:
        if role != "main" or view.azimuth_deg is None:
            return False
        return any(abs(wrap_azimuth(a) - view.azimuth_deg) < 1e-9 for a in clip_azimuths)

    def _new_points(self, rgbd: RGBDView, select: np.ndarray) -> Tuple[PointCloud, int]:
        added = unproject(rgbd, select)
        if not self.config.outlier_removal or not len(added):
            return added, 0
        kept = remove_statistical_outliers(added, self.config.outlier_k, self.config.outlier_sigma_mult)
        return kept, len(added) - len(kept)

    @perf_monitor.time_function("pipeline_step")
    def _step(self, cloud: PointCloud, view: CameraView, role: str, anchor: Tuple[np.ndarray, np.ndarray, CameraView],
              records: List[StepRecord], context: Optional[PointCloud] = None,
              region: Optional[Callable[[CameraView], np.ndarray]] = None,
              clip_azimuths: Sequence[float] = ()) -> Tuple[PointCloud, StepRecord]:
        cfg = self.config
        anchor_color, anchor_mask, anchor_view = anchor
        source = cloud if context is None else merge(context, cloud)
        partial = project(source, view)

        request = ImageCompletionRequest.from_partial(anchor_color, anchor_mask, anchor_view, partial)
        completion = self.image_completer.complete_image(request)
        image_check = check_image_contract(request, completion, self.tolerance_cap)
        if not image_check.passed:
            self._violation(image_check, "Image", view.step, records)

        inpaint = inpaint_region(partial, completion.foreground, cfg.border_radius)
        depth_request = DepthCompletionRequest(completion.color, completion.foreground,
                                               partial.depth, partial.coverage, view)
        predicted = self.depth_completer.complete_depth(depth_request)
        depth_check = check_depth_contract(depth_request, predicted, self.depth_completer.depth_tolerance)
        if not depth_check.passed:
            self._violation(depth_check, "Depth", view.step, records)

        alignment = align_inpainted_depth(predicted, partial, inpaint, cfg.align_ring)
        depth = np.where(completion.foreground, alignment.depth, 0.0)
        holes = None
        if cfg.hole_detection:
            holes = detect_open_holes(depth, completion.foreground & (depth > 0), cfg.hole_epsilon, cfg.edge_fraction)
            inpaint = inpaint & ~holes.hole_mask
        far_clipped = cfg.far_clip and self._is_clip_step(view, role, clip_azimuths)
        if far_clipped:
            inpaint = clip_far_depth(depth, inpaint, cfg.far_clip_quantile)
        if region is not None:
            inpaint = inpaint & region(view)

        rgbd = RGBDView.from_arrays(completion.color, depth, view, completion.foreground)
        added, removed = self._new_points(rgbd, inpaint)
        cloud = merge(cloud, added)
        record = StepRecord(
            step=view.step, role=role, view=view, partial=partial,
            completed_color=completion.color, foreground=completion.foreground, depth=rgbd.depth,
            inpaint_mask=inpaint, hole_mask=holes.hole_mask if holes is not None else np.zeros_like(inpaint),
            points_added=len(added), points_total=len(cloud),
            contract={"image": image_check, "depth": depth_check},
            alignment=alignment, holes=holes, far_clipped=far_clipped, outliers_removed=removed,
            cvcs=None if partial.is_empty else cvcs(completion.color, partial),
        )
        viewloom_logger.log_step(view.step, view.azimuth_deg or 0.0, view.elevation_deg or 0.0,
                                 len(added), len(cloud))
        return cloud, record

    def _views(self, trajectory: Trajectory, max_steps: Optional[int]) -> List[Tuple[CameraView, str]]:
        views = [(v, "main") for v in trajectory.main_views] + [(v, "inpaint") for v in trajectory.inpaint_views]
        return views if max_steps is None else views[:max_steps]

    def reconstruct(self, anchor_color: np.ndarray, anchor_mask: np.ndarray,
                    trajectory: Optional[Trajectory] = None, max_steps: Optional[int] = None) -> ReconstructionResult:
        """Grow a cloud from one image; ``max_steps=0`` stops after the anchor."""
        anchor_mask = np.asarray(anchor_mask, dtype=bool)
        if not np.any(anchor_mask):
            raise InvalidArgumentError("The anchor mask is empty")
        trajectory = trajectory or run_trajectory(self.config)
        anchor_view = trajectory.anchor
        if anchor_mask.shape != anchor_view.shape:
            raise InvalidArgumentError(f"Anchor is {anchor_mask.shape[::-1]}, trajectory expects {anchor_view.shape[::-1]}")
        anchor_color = np.where(anchor_mask[..., None], anchor_color, 0.0)
        records: List[StepRecord] = []
        self.self_test(anchor_color, anchor_mask, anchor_view)

        depth, depth_check = self._anchor_depth(anchor_color, anchor_mask, anchor_view, None, records)
        rgbd = RGBDView.from_arrays(anchor_color, depth, anchor_view, anchor_mask)
        cloud, removed = self._new_points(rgbd, rgbd.mask)
        records.append(StepRecord(0, "anchor", anchor_view, None, anchor_color, anchor_mask, rgbd.depth,
                                  rgbd.mask, np.zeros_like(anchor_mask), len(cloud), len(cloud),
                                  {"depth": depth_check}, outliers_removed=removed))
        viewloom_logger.log_step(0, 0.0, 0.0, len(cloud), len(cloud))

        anchor = (anchor_color, anchor_mask, anchor_view)
        for view, role in self._views(trajectory, max_steps):
            cloud, record = self._step(cloud, view, role, anchor, records,
                                       clip_azimuths=self.config.clip_azimuths(trajectory.degree_deg))
            records.append(record)
        return ReconstructionResult(cloud, records)

    def edit(self, g_prime: PointCloud, edited_color: np.ndarray, edited_mask: np.ndarray,
             region_mask: np.ndarray, removed: PointCloud, trajectory: Optional[Trajectory] = None,
             max_steps: Optional[int] = None) -> ReconstructionResult:
        """Re-synthesize the edited region around the partial garment G'.

        New points come only from the edited pixels at the anchor and from the
        projected footprint of the removed geometry at every other view.
        """
        edited_mask = np.asarray(edited_mask, dtype=bool)
        region_mask = np.asarray(region_mask, dtype=bool)
        trajectory = trajectory or run_trajectory(self.config)
        anchor_view = trajectory.anchor
        if region_mask.shape != anchor_view.shape or edited_mask.shape != anchor_view.shape:
            raise InvalidArgumentError("Edit masks must match the anchor camera")
        if not np.any(region_mask):
            logger.info("Empty edit region, returning the partial garment unchanged")
            return ReconstructionResult(g_prime, [])
        if not np.any(edited_mask):
            raise InvalidArgumentError("The edited anchor mask is empty")
        edited_color = np.where(edited_mask[..., None], edited_color, 0.0)
        records: List[StepRecord] = []
        self.self_test(edited_color, edited_mask, anchor_view)

        condition = project(g_prime, anchor_view)
        keep_known = condition.coverage & ~region_mask
        condition = PartialView(np.where(keep_known[..., None], condition.color, 0.0),
                                np.where(keep_known, condition.depth, 0.0), keep_known, anchor_view)
        region = region_mask & edited_mask
        predicted, depth_check = self._anchor_depth(edited_color, edited_mask, anchor_view, condition, records)
        alignment = align_inpainted_depth(predicted, condition, region, self.config.align_ring)
        rgbd = RGBDView.from_arrays(edited_color, alignment.depth, anchor_view, edited_mask)
        cloud, outliers = self._new_points(rgbd, region)
        records.append(StepRecord(0, "anchor", anchor_view, condition, edited_color, edited_mask, rgbd.depth,
                                  region, np.zeros_like(region), len(cloud), len(g_prime) + len(cloud),
                                  {"depth": depth_check}, alignment=alignment, outliers_removed=outliers))

        def footprint(view: CameraView) -> np.ndarray:
            return edit_footprint(removed, view)

        anchor = (edited_color, edited_mask, anchor_view)
        for view, role in self._views(trajectory, max_steps):
            cloud, record = self._step(cloud, view, role, anchor, records, context=g_prime, region=footprint,
                                       clip_azimuths=self.config.clip_azimuths(trajectory.degree_deg))
            record.points_total = len(g_prime) + len(cloud)
            records.append(record)
        return ReconstructionResult(merge(g_prime, cloud), records)


def reconstruct(anchor_color: np.ndarray, anchor_mask: np.ndarray,
                completers: Tuple[ImageCompleter, DepthCompleter],
                config: Optional[ReconstructionConfig] = None,
                trajectory: Optional[Trajectory] = None, max_steps: Optional[int] = None) -> ReconstructionResult:
    return Reconstructor(*completers, config).reconstruct(anchor_color, anchor_mask, trajectory, max_steps)


def edit(g_prime: PointCloud, edited_color: np.ndarray, edited_mask: np.ndarray, region_mask: np.ndarray,
         completers: Tuple[ImageCompleter, DepthCompleter], removed: PointCloud,
         config: Optional[ReconstructionConfig] = None,
         trajectory: Optional[Trajectory] = None, max_steps: Optional[int] = None) -> ReconstructionResult:
    return Reconstructor(*completers, config).edit(g_prime, edited_color, edited_mask, region_mask,
                                                   removed, trajectory, max_steps)


# Edit regions ---------------------------------------------------------------------

def split_edit_region(pc: PointCloud, edit_view: CameraView, mask: np.ndarray, mode: str = "part",
                      thickness: Optional[float] = None) -> Tuple[PointCloud, PointCloud]:
    """Split a cloud into (kept, removed) by a 2-D edit mask.

    part: every point projecting into the mask goes. surface: only points within
    ``thickness`` behind the first hit of their pixel go.
    """
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != edit_view.shape:
        raise InvalidArgumentError(f"Mask shape {mask.shape} does not match the view {edit_view.shape}")
    if mode not in EDIT_MODES:
        raise InvalidArgumentError(f"Unknown edit mode '{mode}', expected surface or part")
    if not len(pc) or not np.any(mask):
        return pc, PointCloud.empty()

    height, width = edit_view.shape
    u, v, z = edit_view.project(pc.positions)
    px = np.floor(u + 0.5)
    py = np.floor(v + 0.5)
    inside = np.isfinite(u) & np.isfinite(v) & (z > 0) & (px >= 0) & (px < width) & (py >= 0) & (py < height)
    index = np.nonzero(inside)[0]
    pixel = py[index].astype(np.int64) * width + px[index].astype(np.int64)
    hit = mask.reshape(-1)[pixel]
    index, pixel = index[hit], pixel[hit]

    remove = np.zeros(len(pc), dtype=bool)
    if mode == "part":
        remove[index] = True
    else:
        if thickness is None:
            thickness = EDIT_THICKNESS_FRACTION * pc.bbox_diagonal()
        first_hit = np.full(height * width, np.inf)
        np.minimum.at(first_hit, pixel, z[index])
        remove[index] = np.abs(z[index] - first_hit[pixel]) <= thickness
    logger.info(f"Edit region ({mode}) removes {int(remove.sum())} of {len(pc)} points")
    return pc.subset(~remove), pc.subset(remove)


def remove_edit_region(pc: PointCloud, edit_view: CameraView, mask: np.ndarray, mode: str = "part",
                       thickness: Optional[float] = None) -> PointCloud:
    kept, _ = split_edit_region(pc, edit_view, mask, mode, thickness)
    return kept


def edit_footprint(removed: PointCloud, view: CameraView, radius: int = FOOTPRINT_RADIUS) -> np.ndarray:
    """Pixels of a view that the removed geometry projects to, ignoring orientation."""
    coverage = project(removed, view, cull=False).coverage
    if radius > 0 and np.any(coverage):
        coverage = ndimage.binary_dilation(coverage, structure=disk(radius))
    return coverage
