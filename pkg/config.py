"""
Engine Configuration Module
Centralized defaults, environment settings and the reconstruction config
"""

import os
from dataclasses import dataclass, field, asdict, fields
from typing import Dict, Any, List, Optional

from dotenv import load_dotenv

from error_handlers import InvalidArgumentError

load_dotenv()

TOOL_VERSION = "0.3.0"

# Camera defaults
CAMERA_CONFIG: Dict[str, Any] = {
    "radius": 2.5,
    "fov_deg": 50.0,
    "resolution": 512,
    "trajectory": "zigzag",
    "degree_deg": 60.0,
    "positive_first": True,
    "inpaint_count": 4,
    "inpaint_elevation_range": (-30.0, 60.0),
}

# Point cloud settings
CLOUD_CONFIG: Dict[str, Any] = {
    "outlier_k": 16,
    "outlier_sigma_mult": 2.0,
    "outlier_floor_ratio": 2.0,  # of the median mean k-NN distance
    "discontinuity_fraction": 0.02,  # of median foreground depth
}

# Warping and merging
WARP_CONFIG: Dict[str, Any] = {
    "border_radius": 2,
    "align_ring": 4,
    "microfill_min_neighbors": 5,
    "align_min_overlap": 10,
}

# Error-accumulation countermeasures
ROBUST_CONFIG: Dict[str, Any] = {
    "hole_epsilon": 0.85,
    "edge_fraction": 0.05,
    "far_clip_quantile": 0.5,
}

# Point-to-mesh conversion
MESHING_CONFIG: Dict[str, Any] = {
    "resolution": 128,
    "padding": 0.05,
    "k": 8,
    "sigma_voxels": 2.0,
    "support_voxels": 4.0,
    "trim_voxels": 2.0,
    "smooth_iterations": 3,
    "smooth_lambda": 0.5,
    "keep_components": "largest",
    "min_component_fraction": 0.05,
}

# Completion backends
BACKEND_CONFIG: Dict[str, Any] = {
    "timeout_seconds": 120.0,
    "retries": 2,
    "oracle_tolerance": 1.0 / 255.0,
    "remote_tolerance_cap": 16.0 / 255.0,
    "oracle_depth_tolerance": 1e-4,
}

# Wire-protocol server
SERVER_CONFIG: Dict[str, Any] = {
    "host": "127.0.0.1",
    "port": 8765,
}

# Evaluation
METRICS_CONFIG: Dict[str, Any] = {
    "chamfer_samples": 100000,
    "chamfer_seed": 0,
    "psnr_cap_db": 99.0,
    "ssim_sigma": 1.5,
}

# Logging Configuration
LOGGING_CONFIG: Dict[str, Any] = {
    "level": "INFO",
    "format": "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
}


def get_env_config() -> Dict[str, Optional[str]]:
    """Get environment-specific configuration."""
    return {
        "backend_url": os.environ.get("VIEWLOOM_BACKEND_URL"),
        "log_level": os.environ.get("VIEWLOOM_LOG_LEVEL", LOGGING_CONFIG["level"]),
        "server_port": os.environ.get("VIEWLOOM_SERVER_PORT", str(SERVER_CONFIG["port"])),
    }


@dataclass
class ReconstructionConfig:
    """Everything a reconstruction run depends on besides its inputs."""

    trajectory: str = CAMERA_CONFIG["trajectory"]
    degree_deg: float = CAMERA_CONFIG["degree_deg"]
    positive_first: bool = CAMERA_CONFIG["positive_first"]
    resolution: int = CAMERA_CONFIG["resolution"]
    fov_deg: float = CAMERA_CONFIG["fov_deg"]
    radius: float = CAMERA_CONFIG["radius"]
    inpaint_count: int = CAMERA_CONFIG["inpaint_count"]
    seed: int = 0
    outlier_removal: bool = True
    hole_detection: bool = True
    far_clip: bool = True
    outlier_k: int = CLOUD_CONFIG["outlier_k"]
    outlier_sigma_mult: float = CLOUD_CONFIG["outlier_sigma_mult"]
    hole_epsilon: float = ROBUST_CONFIG["hole_epsilon"]
    edge_fraction: float = ROBUST_CONFIG["edge_fraction"]
    far_clip_quantile: float = ROBUST_CONFIG["far_clip_quantile"]
    far_clip_azimuths: Optional[List[float]] = None
    border_radius: int = WARP_CONFIG["border_radius"]
    align_ring: int = WARP_CONFIG["align_ring"]
    mesh_resolution: int = MESHING_CONFIG["resolution"]
    keep_components: str = MESHING_CONFIG["keep_components"]
    backend: Dict[str, Any] = field(default_factory=lambda: {"kind": "oracle", "mesh": None})

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.trajectory not in ("zigzag", "circular"):
            raise InvalidArgumentError(f"Unknown trajectory kind: {self.trajectory}")
        if self.resolution < 64:
            raise InvalidArgumentError(f"Resolution must be at least 64, got {self.resolution}")
        if not 0.0 < self.hole_epsilon <= 1.0:
            raise InvalidArgumentError(f"Hole epsilon must lie in (0, 1], got {self.hole_epsilon}")
        if self.outlier_k < 1:
            raise InvalidArgumentError(f"Outlier k must be positive, got {self.outlier_k}")
        if self.inpaint_count < 0:
            raise InvalidArgumentError(f"Inpaint view count must be >= 0, got {self.inpaint_count}")
        if self.radius <= 0:
            raise InvalidArgumentError(f"Radius must be positive, got {self.radius}")
        if self.keep_components not in ("largest", "fraction"):
            raise InvalidArgumentError(f"Unknown component policy: {self.keep_components}")
        kind = self.backend.get("kind")
        if kind not in ("oracle", "remote"):
            raise InvalidArgumentError(f"Unknown backend kind: {kind}")
        # degree validity is checked by the camera module when the trajectory is built

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ReconstructionConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise InvalidArgumentError(f"Unknown config keys: {', '.join(unknown)}")
        return cls(**data)

    def merged_with(self, overrides: Dict[str, Any]) -> "ReconstructionConfig":
        """Return a copy with non-None overrides applied (flags beat file values)."""
        data = self.to_dict()
        for key, value in overrides.items():
            if value is not None:
                data[key] = value
        return ReconstructionConfig.from_dict(data)

    def clip_azimuths(self, degree_deg: Optional[float] = None) -> List[float]:
        """Explicit far-clip azimuths, else +-2 steps of the given (or configured) degree."""
        if self.far_clip_azimuths is not None:
            return list(self.far_clip_azimuths)
        degree = self.degree_deg if degree_deg is None else degree_deg
        return [2.0 * degree, -2.0 * degree]
