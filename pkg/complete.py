"""
Completion Module
Image/depth completion contracts, the ground-truth oracle, the remote client and depth alignment
"""

import base64
import logging
import threading
import time
from abc import ABC, abstractmethod
from collections import OrderedDict
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

import numpy as np
import requests
from scipy import ndimage

from camera import CameraView, Intrinsics, relative_transform
from config import BACKEND_CONFIG, WARP_CONFIG, get_env_config
from error_handlers import (BackendUnavailableError, FileFormatError, InvalidArgumentError,
                            MalformedResponseError)
from fileio import decode_pfm, decode_png, encode_pfm, encode_png, quantize_color
from logging_config import viewloom_logger
from raster import RGBDView, TriangleMesh, rasterize
from warp import PartialView, disk

logger = logging.getLogger(__name__)

IMAGE_ROUTE = "/v1/complete_image"
DEPTH_ROUTE = "/v1/complete_depth"


def _check_shape(array: np.ndarray, shape: Tuple[int, ...], name: str):
    if array.shape != shape:
        raise InvalidArgumentError(f"{name} has shape {array.shape}, expected {shape}")


@dataclass(frozen=True, eq=False)
class ImageCompletionRequest:
    """Anchor image plus the warped partial image I' and its coverage m'."""

    anchor_color: np.ndarray
    anchor_mask: np.ndarray
    partial_color: np.ndarray
    coverage: np.ndarray
    view: CameraView
    r_rel: np.ndarray
    t_rel: np.ndarray

    def __post_init__(self):
        height, width = self.view.shape
        _check_shape(self.anchor_color, (height, width, 3), "anchor color")
        _check_shape(self.anchor_mask, (height, width), "anchor mask")
        _check_shape(self.partial_color, (height, width, 3), "partial color")
        _check_shape(self.coverage, (height, width), "coverage")
        _check_shape(np.asarray(self.r_rel), (3, 3), "r_rel")
        _check_shape(np.asarray(self.t_rel), (3,), "t_rel")

    @classmethod
    def from_partial(cls, anchor_color: np.ndarray, anchor_mask: np.ndarray,
                     anchor_view: CameraView, partial: PartialView) -> "ImageCompletionRequest":
        r_rel, t_rel = relative_transform(anchor_view.pose, partial.view.pose)
        return cls(anchor_color, np.asarray(anchor_mask, dtype=bool), partial.color, partial.coverage,
                   partial.view, r_rel, t_rel)


@dataclass(frozen=True, eq=False)
class DepthCompletionRequest:
    """Completed image with its foreground, conditioned on the warped depth D'."""

    image: np.ndarray
    foreground: np.ndarray
    partial_depth: np.ndarray
    coverage: np.ndarray
    view: CameraView

    def __post_init__(self):
        height, width = self.view.shape
        _check_shape(self.image, (height, width, 3), "image")
        _check_shape(self.foreground, (height, width), "foreground")
        _check_shape(self.partial_depth, (height, width), "partial depth")
        _check_shape(self.coverage, (height, width), "coverage")

    @classmethod
    def unconditioned(cls, image: np.ndarray, foreground: np.ndarray, view: CameraView) -> "DepthCompletionRequest":
        height, width = view.shape
        return cls(image, np.asarray(foreground, dtype=bool), np.zeros((height, width)),
                   np.zeros((height, width), dtype=bool), view)


@dataclass(frozen=True, eq=False)
class ImageCompletion:
    color: np.ndarray
    foreground: np.ndarray
    tolerance: float


@dataclass
class ContractCheck:
    passed: bool
    max_error: float
    tolerance: Optional[float]
    message: str = ""

    def to_dict(self) -> Dict[str, Any]:
        return {"passed": self.passed, "max_error": self.max_error,
                "tolerance": self.tolerance, "message": self.message}


@dataclass
class AlignmentResult:
    depth: np.ndarray
    scale: float
    shift: float
    support: int
    residual: float

    def to_dict(self) -> Dict[str, Any]:
        return {"scale": self.scale, "shift": self.shift, "support": self.support, "residual": self.residual}


class ImageCompleter(ABC):
    """Stand-in for the image completion model."""

    kind = "image"

    @abstractmethod
    def complete_image(self, request: ImageCompletionRequest) -> ImageCompletion:
        ...


class DepthCompleter(ABC):
    """Stand-in for the conditional depth model."""

    kind = "depth"
    depth_tolerance: Optional[float] = None

    @abstractmethod
    def complete_depth(self, request: DepthCompletionRequest) -> np.ndarray:
        ...


# Ground-truth oracle ------------------------------------------------------------

class GroundTruthOracle:
    """Renders a ground-truth mesh; keeps the last few renders."""

    def __init__(self, mesh: TriangleMesh, cache_size: int = 8):
        self.mesh = mesh
        self.cache_size = cache_size
        self._cache: "OrderedDict[bytes, RGBDView]" = OrderedDict()
        self._lock = threading.Lock()

    @staticmethod
    def _key(view: CameraView) -> bytes:
        k = view.intrinsics
        header = np.array([k.fx, k.fy, k.cx, k.cy, k.width, k.height], dtype=np.float64)
        return header.tobytes() + view.pose.R.tobytes() + view.pose.t.tobytes()

    def render(self, view: CameraView) -> RGBDView:
        key = self._key(view)
        with self._lock:
            if key in self._cache:
                self._cache.move_to_end(key)
                return self._cache[key]
        rendered = rasterize(self.mesh, view)
        with self._lock:
            self._cache[key] = rendered
            while len(self._cache) > self.cache_size:
                self._cache.popitem(last=False)
        return rendered


class OracleImageCompleter(ImageCompleter):
    """Keeps the known pixels and fills the rest from the ground truth."""

    def __init__(self, oracle: GroundTruthOracle, tolerance: float = BACKEND_CONFIG["oracle_tolerance"]):
        self.oracle = oracle
        self.tolerance = tolerance

    def complete_image(self, request: ImageCompletionRequest) -> ImageCompletion:
        truth = self.oracle.render(request.view)
        coverage = np.asarray(request.coverage, dtype=bool)
        foreground = truth.mask | coverage
        color = np.where(coverage[..., None], quantize_color(request.partial_color), quantize_color(truth.color))
        color[~foreground] = 0.0
        return ImageCompletion(color, foreground, self.tolerance)


class OracleDepthCompleter(DepthCompleter):
    """Ground-truth depth on the requested foreground, warped depth where known."""

    def __init__(self, oracle: GroundTruthOracle, tolerance: float = BACKEND_CONFIG["oracle_depth_tolerance"]):
        self.oracle = oracle
        self.depth_tolerance = tolerance

    def complete_depth(self, request: DepthCompletionRequest) -> np.ndarray:
        truth = self.oracle.render(request.view)
        foreground = np.asarray(request.foreground, dtype=bool)
        coverage = np.asarray(request.coverage, dtype=bool)
        depth = np.where(coverage, request.partial_depth, np.where(truth.mask, truth.depth, 0.0))
        known = depth > 0
        missing = foreground & ~known
        if np.any(missing) and np.any(known):
            # foreground the truth does not cover takes the nearest known depth
            _, (rows, cols) = ndimage.distance_transform_edt(~known, return_indices=True)
            depth = np.where(missing, depth[rows, cols], depth)
        depth = np.where(foreground, depth, 0.0)
        return depth.astype(np.float32).astype(np.float64)


# Contract checks ----------------------------------------------------------------

def check_image_contract(request: ImageCompletionRequest, completion: ImageCompletion,
                         tolerance_cap: float = BACKEND_CONFIG["remote_tolerance_cap"]) -> ContractCheck:
    """Known-region preservation: covered pixels keep their color within the declared tolerance."""
    height, width = request.view.shape
    if completion.color.shape != (height, width, 3) or completion.foreground.shape != (height, width):
        return ContractCheck(False, float("inf"), completion.tolerance, "completion has the wrong size")
    tolerance = float(completion.tolerance)
    if not np.isfinite(tolerance) or tolerance > tolerance_cap:
        return ContractCheck(False, float("nan"), tolerance,
                             f"declared tolerance {tolerance:.5f} exceeds the cap {tolerance_cap:.5f}")
    coverage = np.asarray(request.coverage, dtype=bool)
    if not np.any(coverage):
        return ContractCheck(True, 0.0, tolerance)
    error = float(np.abs(completion.color[coverage] - request.partial_color[coverage]).max())
    # the known colors travel as 8-bit PNG
    allowed = tolerance + 1e-9
    if error > allowed:
        return ContractCheck(False, error, tolerance, f"known-region error {error:.5f} > {tolerance:.5f}")
    if np.any(coverage & ~completion.foreground):
        return ContractCheck(False, error, tolerance, "foreground does not contain the covered pixels")
    return ContractCheck(True, error, tolerance)


def check_depth_contract(request: DepthCompletionRequest, depth: np.ndarray,
                         tolerance: Optional[float]) -> ContractCheck:
    foreground = np.asarray(request.foreground, dtype=bool)
    if depth.shape != foreground.shape:
        return ContractCheck(False, float("inf"), tolerance, "depth has the wrong size")
    values = depth[foreground]
    if not np.all(np.isfinite(values) & (values > 0)):
        return ContractCheck(False, float("inf"), tolerance, "depth is not positive on the foreground")
    covered = np.asarray(request.coverage, dtype=bool) & foreground
    if not np.any(covered):
        return ContractCheck(True, 0.0, tolerance)
    error = float(np.abs(depth[covered] - request.partial_depth[covered]).max())
    if tolerance is not None and error > tolerance:
        return ContractCheck(False, error, tolerance, f"known-depth error {error:.6f} > {tolerance:.6f}")
    return ContractCheck(True, error, tolerance)


# Depth alignment ----------------------------------------------------------------

def align_inpainted_depth(pred: np.ndarray, warped: PartialView, inpaint_mask: np.ndarray,
                          ring: int = WARP_CONFIG["align_ring"],
                          min_overlap: int = WARP_CONFIG["align_min_overlap"]) -> AlignmentResult:
    """Fit warped ~ s * pred + b on covered pixels near the inpaint region and apply it."""
    pred = np.asarray(pred, dtype=np.float64)
    inpaint_mask = np.asarray(inpaint_mask, dtype=bool)
    coverage = warped.coverage
    if pred.shape != coverage.shape or inpaint_mask.shape != coverage.shape:
        raise InvalidArgumentError("Depth maps and masks must have the same shape")

    near = ndimage.binary_dilation(inpaint_mask, structure=disk(ring)) if np.any(inpaint_mask) else inpaint_mask
    overlap = coverage & near
    x = pred[overlap]
    y = warped.depth[overlap]
    if len(x) >= min_overlap and np.var(x) >= 1e-12:
        design = np.stack([x, np.ones_like(x)], axis=1)
        (scale, shift), *_ = np.linalg.lstsq(design, y, rcond=None)
    else:
        scale = 1.0
        shift = float(np.mean(y - x)) if len(x) else 0.0
    scale, shift = float(scale), float(shift)
    residual = float(np.sqrt(np.mean((scale * x + shift - y) ** 2))) if len(x) else 0.0

    aligned = pred.copy()
    fill = inpaint_mask & ~coverage
    aligned[fill] = scale * pred[fill] + shift
    aligned[coverage] = warped.depth[coverage]
    return AlignmentResult(aligned, scale, shift, int(overlap.sum()), residual)


# Wire protocol ------------------------------------------------------------------

def _b64(payload: bytes) -> str:
    return base64.b64encode(payload).decode("ascii")


def _unb64(text: Any) -> bytes:
    if not isinstance(text, str):
        raise FileFormatError("Expected a base64 string")
    try:
        return base64.b64decode(text, validate=True)
    except ValueError as e:
        raise FileFormatError(f"Invalid base64 payload: {e}") from e


def image_request_payload(request: ImageCompletionRequest) -> Dict[str, Any]:
    return {
        "anchor_png_b64": _b64(encode_png(request.anchor_color, request.anchor_mask)),
        "partial_png_b64": _b64(encode_png(request.partial_color, request.coverage)),
        "r_rel": [float(x) for x in np.asarray(request.r_rel).reshape(-1)],
        "t_rel": [float(x) for x in np.asarray(request.t_rel)],
        "intrinsics": request.view.intrinsics.to_dict(),
        "view": request.view.to_dict(),
    }


def parse_image_request(payload: Dict[str, Any]) -> ImageCompletionRequest:
    try:
        view = CameraView.from_dict(payload["view"])
        if Intrinsics.from_dict(payload["intrinsics"]) != view.intrinsics:
            raise InvalidArgumentError("intrinsics disagree with the view")
        anchor_color, anchor_mask = decode_png(_unb64(payload["anchor_png_b64"]))
        partial_color, coverage = decode_png(_unb64(payload["partial_png_b64"]))
        r_rel = np.asarray(payload["r_rel"], dtype=np.float64).reshape(3, 3)
        t_rel = np.asarray(payload["t_rel"], dtype=np.float64).reshape(3)
    except (KeyError, TypeError, ValueError, FileFormatError) as e:
        raise InvalidArgumentError(f"Malformed image completion request: {e}") from e
    return ImageCompletionRequest(anchor_color, anchor_mask, partial_color, coverage, view, r_rel, t_rel)


def image_response_payload(completion: ImageCompletion) -> Dict[str, Any]:
    return {"image_png_b64": _b64(encode_png(completion.color, completion.foreground)),
            "tolerance": float(completion.tolerance)}


def depth_request_payload(request: DepthCompletionRequest) -> Dict[str, Any]:
    return {
        "image_png_b64": _b64(encode_png(request.image, request.foreground)),
        "partial_depth_pfm_b64": _b64(encode_pfm(np.where(request.coverage, request.partial_depth, 0.0))),
        "coverage_png_b64": _b64(encode_png(np.zeros(request.image.shape), request.coverage)),
        "view": request.view.to_dict(),
    }


def parse_depth_request(payload: Dict[str, Any]) -> DepthCompletionRequest:
    try:
        view = CameraView.from_dict(payload["view"])
        image, foreground = decode_png(_unb64(payload["image_png_b64"]))
        partial_depth = decode_pfm(_unb64(payload["partial_depth_pfm_b64"])).astype(np.float64)
        _, coverage = decode_png(_unb64(payload["coverage_png_b64"]))
    except (KeyError, TypeError, ValueError, FileFormatError) as e:
        raise InvalidArgumentError(f"Malformed depth completion request: {e}") from e
    return DepthCompletionRequest(image, foreground, partial_depth, coverage, view)


def depth_response_payload(depth: np.ndarray) -> Dict[str, Any]:
    return {"depth_pfm_b64": _b64(encode_pfm(depth))}


class RemoteBackend:
    """JSON-over-HTTP completion endpoint; one request in flight per handle."""

    def __init__(self, endpoint: str, timeout: float = BACKEND_CONFIG["timeout_seconds"],
                 retries: int = BACKEND_CONFIG["retries"], session: Optional[requests.Session] = None):
        self.endpoint = endpoint.rstrip("/")
        self.timeout = timeout
        self.retries = retries
        self.session = session or requests.Session()
        self._lock = threading.Lock()

    def post(self, route: str, payload: Dict[str, Any]) -> Dict[str, Any]:
        url = f"{self.endpoint}{route}"
        last_error: Optional[Exception] = None
        with self._lock:
            for attempt in range(1, self.retries + 2):
                start = time.perf_counter()
                try:
                    response = self.session.post(url, json=payload, timeout=self.timeout)
                except (requests.ConnectionError, requests.Timeout) as e:
                    last_error = e
                    logger.warning(f"Backend request to {url} failed (attempt {attempt}): {e}")
                    continue
                viewloom_logger.log_backend_request(url, route.rsplit("/", 1)[-1],
                                                    time.perf_counter() - start, attempt)
                if response.status_code >= 500:
                    last_error = BackendUnavailableError(f"{url} answered {response.status_code}")
                    logger.warning(f"Backend error at {url} (attempt {attempt}): {response.status_code}")
                    continue
                return self._decode(url, response)
        raise BackendUnavailableError(f"Backend {url} unavailable after {self.retries + 1} attempts: {last_error}")

    @staticmethod
    def _decode(url: str, response: requests.Response) -> Dict[str, Any]:
        try:
            body = response.json()
        except ValueError as e:
            raise MalformedResponseError(f"{url} did not return JSON: {e}") from e
        if not isinstance(body, dict):
            raise MalformedResponseError(f"{url} returned a non-object body")
        if response.status_code >= 400:
            raise BackendUnavailableError(f"{url} rejected the request ({response.status_code}): "
                                          f"{body.get('code')}: {body.get('message')}")
        return body


class RemoteImageCompleter(ImageCompleter):
    def __init__(self, backend: RemoteBackend):
        self.backend = backend

    def complete_image(self, request: ImageCompletionRequest) -> ImageCompletion:
        body = self.backend.post(IMAGE_ROUTE, image_request_payload(request))
        try:
            color, foreground = decode_png(_unb64(body["image_png_b64"]))
            tolerance = float(body["tolerance"])
        except (KeyError, TypeError, ValueError, FileFormatError) as e:
            raise MalformedResponseError(f"Malformed image completion response: {e}") from e
        if foreground.shape != request.view.shape:
            raise MalformedResponseError(f"Completed image is {foreground.shape[1]}x{foreground.shape[0]}, "
                                         f"expected {request.view.intrinsics.width}x{request.view.intrinsics.height}")
        return ImageCompletion(color, foreground, tolerance)


class RemoteDepthCompleter(DepthCompleter):
    def __init__(self, backend: RemoteBackend, tolerance: Optional[float] = None):
        self.backend = backend
        self.depth_tolerance = tolerance

    def complete_depth(self, request: DepthCompletionRequest) -> np.ndarray:
        body = self.backend.post(DEPTH_ROUTE, depth_request_payload(request))
        try:
            depth = decode_pfm(_unb64(body["depth_pfm_b64"])).astype(np.float64)
        except (KeyError, TypeError, ValueError, FileFormatError) as e:
            raise MalformedResponseError(f"Malformed depth completion response: {e}") from e
        if depth.shape != request.view.shape:
            raise MalformedResponseError(f"Completed depth has shape {depth.shape}, expected {request.view.shape}")
        return depth


def _resolve_endpoint(endpoint: Optional[str]) -> str:
    endpoint = endpoint or get_env_config()["backend_url"]
    if not endpoint:
        raise InvalidArgumentError("No backend URL given and VIEWLOOM_BACKEND_URL is not set")
    return endpoint


def remote_image_completer(endpoint: Optional[str] = None, **kwargs) -> RemoteImageCompleter:
    return RemoteImageCompleter(RemoteBackend(_resolve_endpoint(endpoint), **kwargs))


def remote_depth_completer(endpoint: Optional[str] = None, tolerance: Optional[float] = None,
                           **kwargs) -> RemoteDepthCompleter:
    return RemoteDepthCompleter(RemoteBackend(_resolve_endpoint(endpoint), **kwargs), tolerance)


def make_completers(backend: Dict[str, Any], mesh: Optional[TriangleMesh] = None) -> Tuple[ImageCompleter, DepthCompleter]:
    """Build the completer pair for a backend selection {kind: oracle|remote, ...}."""
    kind = backend.get("kind")
    if kind == "oracle":
        if mesh is None:
            raise InvalidArgumentError("The oracle backend needs a ground-truth mesh")
        oracle = GroundTruthOracle(mesh)
        return OracleImageCompleter(oracle), OracleDepthCompleter(oracle)
    if kind == "remote":
        url = _resolve_endpoint(backend.get("url"))
        return remote_image_completer(url), remote_depth_completer(url, backend.get("depth_tolerance"))
    raise InvalidArgumentError(f"Unknown backend kind: {kind}")
