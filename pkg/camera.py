"""
Camera Module
Pinhole intrinsics, orbit poses, relative transforms and view trajectories

Conventions: right-handed world with Y up and the object at the origin.
Camera frame is x right, y down, z forward. Integer pixel (u, v) is the
sample at image coordinates (u, v), so a camera point projects to
(fx * x / z + cx, fy * y / z + cy).
"""

import math
from dataclasses import dataclass
from typing import Dict, Any, List, Optional, Tuple

import numpy as np

from error_handlers import InvalidArgumentError

ORTHONORMAL_TOLERANCE = 1e-6
WORLD_UP = np.array([0.0, 1.0, 0.0])
TRAJECTORY_KINDS = ("zigzag", "circular")


def _frozen_array(values, shape: Tuple[int, ...], name: str) -> np.ndarray:
    array = np.array(values, dtype=np.float64).reshape(shape)
    if not np.all(np.isfinite(array)):
        raise InvalidArgumentError(f"{name} must be finite")
    array.setflags(write=False)
    return array


def wrap_azimuth(azimuth_deg: float) -> float:
    """Map an angle in degrees into (-180, 180]."""
    wrapped = azimuth_deg % 360.0
    if wrapped > 180.0:
        wrapped -= 360.0
    return float(wrapped)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole intrinsics in pixels."""

    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        values = (self.fx, self.fy, self.cx, self.cy)
        if not all(math.isfinite(v) for v in values):
            raise InvalidArgumentError("Intrinsics must be finite")
        if self.fx <= 0 or self.fy <= 0:
            raise InvalidArgumentError(f"Focal lengths must be positive, got fx={self.fx}, fy={self.fy}")
        if self.width < 8 or self.height < 8:
            raise InvalidArgumentError(f"Image must be at least 8x8, got {self.width}x{self.height}")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise InvalidArgumentError(f"Principal point ({self.cx}, {self.cy}) outside the image")

    @classmethod
    def from_fov(cls, width: int, height: Optional[int] = None, fov_deg: float = 50.0) -> "Intrinsics":
        """Square-pixel intrinsics with the principal point at the image centre."""
        height = width if height is None else height
        if not 0.0 < fov_deg < 180.0:
            raise InvalidArgumentError(f"Field of view must lie in (0, 180), got {fov_deg}")
        focal = width / (2.0 * math.tan(math.radians(fov_deg) / 2.0))
        return cls(focal, focal, (width - 1) / 2.0, (height - 1) / 2.0, int(width), int(height))

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.height, self.width)

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx],
                         [0.0, self.fy, self.cy],
                         [0.0, 0.0, 1.0]])

    def to_dict(self) -> Dict[str, Any]:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Intrinsics":
        try:
            return cls(float(data["fx"]), float(data["fy"]), float(data["cx"]), float(data["cy"]),
                       int(data["width"]), int(data["height"]))
        except (KeyError, TypeError) as e:
            raise InvalidArgumentError(f"Malformed intrinsics: {e}") from e


@dataclass(frozen=True, eq=False)
class Pose:
    """World-to-camera rigid transform: x_cam = R @ x_world + t."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        rotation = _frozen_array(self.R, (3, 3), "R")
        translation = _frozen_array(self.t, (3,), "t")
        if not np.allclose(rotation.T @ rotation, np.eye(3), atol=ORTHONORMAL_TOLERANCE):
            raise InvalidArgumentError("R is not orthonormal")
        if abs(np.linalg.det(rotation) - 1.0) > ORTHONORMAL_TOLERANCE:
            raise InvalidArgumentError("R is not a proper rotation (det != +1)")
        object.__setattr__(self, "R", rotation)
        object.__setattr__(self, "t", translation)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @property
    def center(self) -> np.ndarray:
        """Camera centre in world coordinates."""
        return -self.R.T @ self.t

    def to_camera(self, points: np.ndarray) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.R.T + self.t

    def to_world(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) - self.t) @ self.R

    def rotate_to_world(self, vectors: np.ndarray) -> np.ndarray:
        return np.asarray(vectors, dtype=np.float64) @ self.R

    def allclose(self, other: "Pose", atol: float = 1e-9) -> bool:
        return bool(np.allclose(self.R, other.R, atol=atol) and np.allclose(self.t, other.t, atol=atol))


def orbit_pose(azimuth_deg: float, elevation_deg: float, radius: float) -> Pose:
    """Look-at pose for a camera on a sphere around the origin, world +Y as up."""
    if not all(math.isfinite(v) for v in (azimuth_deg, elevation_deg, radius)):
        raise InvalidArgumentError("Orbit parameters must be finite")
    if radius <= 0:
        raise InvalidArgumentError(f"Radius must be positive, got {radius}")
    if abs(elevation_deg) >= 90.0:
        raise InvalidArgumentError(f"|elevation| must be below 90 degrees, got {elevation_deg}")

    az = math.radians(azimuth_deg)
    el = math.radians(elevation_deg)
    center = radius * np.array([math.sin(az) * math.cos(el),
                                math.sin(el),
                                math.cos(az) * math.cos(el)])
    forward = -center / np.linalg.norm(center)
    right = np.cross(forward, WORLD_UP)
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    rotation = np.stack([right, down, forward])
    return Pose(rotation, -rotation @ center)


def relative_transform(anchor: Pose, target: Pose) -> Tuple[np.ndarray, np.ndarray]:
    """(R_rel, T_rel) with x_target_cam = R_rel @ x_anchor_cam + T_rel."""
    r_rel = target.R @ anchor.R.T
    t_rel = target.t - r_rel @ anchor.t
    return r_rel, t_rel


def compose_relative(first: Tuple[np.ndarray, np.ndarray],
                     second: Tuple[np.ndarray, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    """Chain a->b with b->c into a->c."""
    r1, t1 = first
    r2, t2 = second
    return r2 @ r1, r2 @ t1 + t2


@dataclass(frozen=True, eq=False)
class CameraView:
    """A camera of the trajectory: intrinsics, pose and orbit metadata."""

    intrinsics: Intrinsics
    pose: Pose
    step: int = 0
    azimuth_deg: Optional[float] = None
    elevation_deg: Optional[float] = None
    radius: Optional[float] = None

    def __post_init__(self):
        if self.step < 0:
            raise InvalidArgumentError(f"Step must be >= 0, got {self.step}")
        if self.radius is not None and self.radius <= 0:
            raise InvalidArgumentError(f"Radius must be positive, got {self.radius}")
        if self.has_orbit:
            expected = orbit_pose(self.azimuth_deg, self.elevation_deg, self.radius)
            if not self.pose.allclose(expected, atol=ORTHONORMAL_TOLERANCE):
                raise InvalidArgumentError("Pose does not match its orbit metadata")

    @classmethod
    def orbit(cls, azimuth_deg: float, elevation_deg: float, radius: float,
              intrinsics: Intrinsics, step: int = 0) -> "CameraView":
        azimuth_deg = wrap_azimuth(azimuth_deg)
        return cls(intrinsics, orbit_pose(azimuth_deg, elevation_deg, radius), step,
                   azimuth_deg, float(elevation_deg), float(radius))

    @property
    def has_orbit(self) -> bool:
        return None not in (self.azimuth_deg, self.elevation_deg, self.radius)

    @property
    def shape(self) -> Tuple[int, int]:
        return self.intrinsics.shape

    @property
    def center(self) -> np.ndarray:
        return self.pose.center

    def with_step(self, step: int) -> "CameraView":
        return CameraView(self.intrinsics, self.pose, step, self.azimuth_deg, self.elevation_deg, self.radius)

    def project(self, points_world: np.ndarray) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Continuous image coordinates (u, v) and camera depth z of world points."""
        cam = self.pose.to_camera(points_world)
        z = cam[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            u = self.intrinsics.fx * cam[:, 0] / z + self.intrinsics.cx
            v = self.intrinsics.fy * cam[:, 1] / z + self.intrinsics.cy
        return u, v, z

    def pixel_rays(self) -> np.ndarray:
        """Camera-space (x/z, y/z, 1) for every pixel, shape (H, W, 3)."""
        k = self.intrinsics
        u = np.arange(k.width, dtype=np.float64)
        v = np.arange(k.height, dtype=np.float64)
        uu, vv = np.meshgrid(u, v)
        return np.stack([(uu - k.cx) / k.fx, (vv - k.cy) / k.fy, np.ones_like(uu)], axis=-1)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "step": self.step,
            "azimuth_deg": self.azimuth_deg,
            "elevation_deg": self.elevation_deg,
            "radius": self.radius,
            "intrinsics": self.intrinsics.to_dict(),
            "R": [float(x) for x in self.pose.R.reshape(-1)],
            "t": [float(x) for x in self.pose.t],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "CameraView":
        try:
            pose = Pose(np.asarray(data["R"], dtype=np.float64).reshape(3, 3), data["t"])
            return cls(Intrinsics.from_dict(data["intrinsics"]), pose, int(data.get("step", 0)),
                       data.get("azimuth_deg"), data.get("elevation_deg"), data.get("radius"))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, InvalidArgumentError):
                raise
            raise InvalidArgumentError(f"Malformed camera view: {e}") from e


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Ordered main views around the object plus random closure views."""

    kind: str
    degree_deg: float
    main_views: Tuple[CameraView, ...]
    inpaint_views: Tuple[CameraView, ...] = ()
    seed: int = 0
    positive_first: bool = True

    def __post_init__(self):
        object.__setattr__(self, "main_views", tuple(self.main_views))
        object.__setattr__(self, "inpaint_views", tuple(self.inpaint_views))
        if self.kind not in TRAJECTORY_KINDS:
            raise InvalidArgumentError(f"Unknown trajectory kind: {self.kind}")
        if not self.main_views:
            raise InvalidArgumentError("A trajectory needs at least one main view")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise InvalidArgumentError(f"Seed must be an unsigned 64-bit integer, got {self.seed}")
        for view in self.views:
            if view.azimuth_deg is not None and not -180.0 < view.azimuth_deg <= 180.0:
                raise InvalidArgumentError(f"Azimuth {view.azimuth_deg} outside (-180, 180]")
        if self.kind == "zigzag" and self.main_views[-1].azimuth_deg != 180.0:
            raise InvalidArgumentError("A zigzag trajectory must close at azimuth 180")

    @property
    def views(self) -> Tuple[CameraView, ...]:
        return self.main_views + self.inpaint_views

    @property
    def radius(self) -> float:
        return float(np.linalg.norm(self.main_views[0].center))

    @property
    def intrinsics(self) -> Intrinsics:
        return self.main_views[0].intrinsics

    @property
    def anchor(self) -> CameraView:
        """The near-frontal input camera at azimuth 0, step 0."""
        return CameraView.orbit(0.0, 0.0, self.radius, self.intrinsics, step=0)

    def to_dict(self) -> Dict[str, Any]:
        views = [dict(self.anchor.to_dict(), role="anchor")]
        views += [dict(v.to_dict(), role="main") for v in self.main_views]
        views += [dict(v.to_dict(), role="inpaint") for v in self.inpaint_views]
        return {
            "kind": self.kind,
            "degree_deg": self.degree_deg,
            "seed": int(self.seed),
            "positive_first": self.positive_first,
            "views": views,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "Trajectory":
        try:
            views = data["views"]
            main = [CameraView.from_dict(v) for v in views if v.get("role", "main") == "main"]
            inpaint = [CameraView.from_dict(v) for v in views if v.get("role") == "inpaint"]
            return cls(data["kind"], float(data["degree_deg"]), tuple(main), tuple(inpaint),
                       int(data.get("seed", 0)), bool(data.get("positive_first", True)))
        except (KeyError, TypeError, AttributeError) as e:
            raise InvalidArgumentError(f"Malformed trajectory: {e}") from e


def _steps_for(span_deg: float, degree_deg: float) -> int:
    if not math.isfinite(degree_deg) or degree_deg <= 0:
        raise InvalidArgumentError(f"Degree must be positive, got {degree_deg}")
    count = span_deg / degree_deg
    if abs(count - round(count)) > 1e-9 or round(count) < 1:
        raise InvalidArgumentError(f"Degree {degree_deg} does not divide {span_deg}")
    return int(round(count))


def _divides(degree_deg: float, span_deg: float) -> bool:
    if not math.isfinite(degree_deg) or degree_deg <= 0:
        return False
    count = span_deg / degree_deg
    return abs(count - round(count)) <= 1e-9


def zigzag_azimuths(degree_deg: float, positive_first: bool = True) -> List[float]:
    """[+d, -d, +2d, -2d, ..., 180] (sign order flipped when positive_first is off).

    Degrees dividing 360 but not 180 (120) step out while below 180 and close at 180.
    """
    if _divides(degree_deg, 360.0) and not _divides(degree_deg, 180.0):
        count = int(math.ceil(180.0 / degree_deg))
    else:
        count = _steps_for(180.0, degree_deg)
    azimuths: List[float] = []
    for k in range(1, count):
        angle = k * degree_deg
        azimuths.extend([angle, -angle] if positive_first else [-angle, angle])
    azimuths.append(180.0)
    return azimuths


def circular_azimuths(degree_deg: float) -> List[float]:
    count = _steps_for(360.0, degree_deg)
    return [wrap_azimuth(k * degree_deg) for k in range(1, count)]


def inpaint_views(count: int, seed: int, radius: float, intrinsics: Intrinsics,
                  first_step: int = 1,
                  elevation_range: Tuple[float, float] = (-30.0, 60.0)) -> List[CameraView]:
    """Random closure views: azimuth uniform in [0, 360), elevation uniform in the range."""
    if count < 0:
        raise InvalidArgumentError(f"Inpaint view count must be >= 0, got {count}")
    rng = np.random.default_rng(seed)
    azimuths = rng.uniform(0.0, 360.0, size=count)
    elevations = rng.uniform(elevation_range[0], elevation_range[1], size=count)
    return [CameraView.orbit(float(az), float(el), radius, intrinsics, step=first_step + i)
            for i, (az, el) in enumerate(zip(azimuths, elevations))]


def zigzag_trajectory(degree_deg: float, radius: float, intrinsics: Intrinsics,
                      positive_first: bool = True, inpaint_count: int = 0, seed: int = 0) -> Trajectory:
    """Alternate left/right around the object, closing the loop at the back."""
    azimuths = zigzag_azimuths(degree_deg, positive_first)
    main = [CameraView.orbit(az, 0.0, radius, intrinsics, step=i + 1) for i, az in enumerate(azimuths)]
    extra = inpaint_views(inpaint_count, seed, radius, intrinsics, first_step=len(main) + 1)
    return Trajectory("zigzag", float(degree_deg), tuple(main), tuple(extra), seed, positive_first)


def circular_trajectory(degree_deg: float, radius: float, intrinsics: Intrinsics,
                        inpaint_count: int = 0, seed: int = 0) -> Trajectory:
    """Move around the object in one direction with regular steps."""
    azimuths = circular_azimuths(degree_deg)
    main = [CameraView.orbit(az, 0.0, radius, intrinsics, step=i + 1) for i, az in enumerate(azimuths)]
    extra = inpaint_views(inpaint_count, seed, radius, intrinsics, first_step=len(main) + 1)
    return Trajectory("circular", float(degree_deg), tuple(main), tuple(extra), seed)


def build_trajectory(kind: str, degree_deg: float, radius: float, intrinsics: Intrinsics,
                     positive_first: bool = True, inpaint_count: int = 0, seed: int = 0) -> Trajectory:
    if kind == "zigzag":
        return zigzag_trajectory(degree_deg, radius, intrinsics, positive_first, inpaint_count, seed)
    if kind == "circular":
        return circular_trajectory(degree_deg, radius, intrinsics, inpaint_count, seed)
    raise InvalidArgumentError(f"Unknown trajectory kind: {kind}")


def evaluation_views(radius: float, intrinsics: Intrinsics, protocol: str = "mesh12") -> List[CameraView]:
    """Cameras of the evaluation protocols.

    mesh12: 12 azimuths every 30 degrees, elevation alternating 0 / 20.
    nvs6: 6 azimuths every 60 degrees at elevation 20.
    """
    if protocol == "mesh12":
        return [CameraView.orbit(k * 30.0, 0.0 if k % 2 == 0 else 20.0, radius, intrinsics, step=k)
                for k in range(12)]
    if protocol == "nvs6":
        return [CameraView.orbit(k * 60.0, 20.0, radius, intrinsics, step=k) for k in range(6)]
    raise InvalidArgumentError(f"Unknown evaluation protocol: {protocol}")
