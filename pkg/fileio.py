"""
File I/O Module
PLY clouds and meshes, PFM depth, RGBA PNG images and JSON metadata
"""

import hashlib
import io
import json
import logging
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
from PIL import Image, UnidentifiedImageError
from plyfile import PlyData, PlyElement, PlyParseError

from cloud import PointCloud
from error_handlers import FileFormatError, InvalidArgumentError, UnknownPropertyError
from logging_config import viewloom_logger
from raster import TriangleMesh

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
PNG_SIGNATURE = b"\x89PNG\r\n\x1a\n"
CLOUD_PROPERTIES = ("x", "y", "z", "nx", "ny", "nz", "red", "green", "blue")


def to_uint8(values: np.ndarray) -> np.ndarray:
    return np.round(np.clip(values, 0.0, 1.0) * 255.0).astype(np.uint8)


def quantize_color(values: np.ndarray) -> np.ndarray:
    """Snap colors to the 8-bit grid that PNG files carry."""
    return to_uint8(values).astype(np.float64) / 255.0


def _read_ply(path: PathLike) -> PlyData:
    try:
        return PlyData.read(str(path))
    except FileNotFoundError:
        raise
    except (PlyParseError, ValueError, EOFError, IndexError) as e:
        raise FileFormatError(f"Cannot parse PLY file {path}: {e}") from e


def _element_names(ply: PlyData):
    return {element.name for element in ply.elements}


def _require(names, required, path: PathLike):
    missing = [name for name in required if name not in names]
    if missing:
        raise UnknownPropertyError(f"{path} is missing required vertex properties: {', '.join(missing)}")


# Point clouds ------------------------------------------------------------------

def write_cloud(path: PathLike, pc: PointCloud) -> None:
    if len(pc) and pc.steps.max() > 255:
        raise InvalidArgumentError("Step indices above 255 do not fit the PLY step property")
    vertex = np.empty(len(pc), dtype=[("x", "<f4"), ("y", "<f4"), ("z", "<f4"),
                                      ("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4"),
                                      ("red", "u1"), ("green", "u1"), ("blue", "u1"),
                                      ("step", "u1")])
    for axis, name in enumerate("xyz"):
        vertex[name] = pc.positions[:, axis]
        vertex["n" + name] = pc.orientations[:, axis]
    rgb = to_uint8(pc.colors)
    for channel, name in enumerate(("red", "green", "blue")):
        vertex[name] = rgb[:, channel]
    vertex["step"] = pc.steps
    PlyData([PlyElement.describe(vertex, "vertex")], byte_order="<").write(str(path))
    viewloom_logger.log_file_written(str(path), {"points": len(pc)})


def read_cloud(path: PathLike) -> PointCloud:
    ply = _read_ply(path)
    if "vertex" not in _element_names(ply):
        raise FileFormatError(f"{path} has no vertex element")
    data = ply["vertex"].data
    names = data.dtype.names or ()
    _require(names, CLOUD_PROPERTIES, path)
    if not len(data):
        return PointCloud.empty()
    positions = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    orientations = np.stack([data["nx"], data["ny"], data["nz"]], axis=1).astype(np.float64)
    lengths = np.linalg.norm(orientations, axis=1, keepdims=True)
    if np.any(lengths == 0):
        raise FileFormatError(f"{path} contains zero-length orientations")
    colors = np.stack([data["red"], data["green"], data["blue"]], axis=1).astype(np.float64) / 255.0
    steps = data["step"].astype(np.int64) if "step" in names else np.zeros(len(data), dtype=np.int64)
    return PointCloud(positions, colors, orientations / lengths, steps)


# Meshes ------------------------------------------------------------------------

def write_mesh(path: PathLike, mesh: TriangleMesh) -> None:
    """PLY with vertex colors (and normals when present); ``.obj`` paths get geometry only."""
    if str(path).lower().endswith(".obj"):
        write_obj(path, mesh)
        return
    fields = [("x", "<f4"), ("y", "<f4"), ("z", "<f4")]
    if mesh.normals is not None:
        fields += [("nx", "<f4"), ("ny", "<f4"), ("nz", "<f4")]
    fields += [("red", "u1"), ("green", "u1"), ("blue", "u1")]
    vertex = np.empty(mesh.vertex_count, dtype=fields)
    for axis, name in enumerate("xyz"):
        vertex[name] = mesh.vertices[:, axis]
        if mesh.normals is not None:
            vertex["n" + name] = mesh.normals[:, axis]
    rgb = to_uint8(mesh.colors)
    for channel, name in enumerate(("red", "green", "blue")):
        vertex[name] = rgb[:, channel]
    face = np.empty(mesh.face_count, dtype=[("vertex_indices", "<i4", (3,))])
    face["vertex_indices"] = mesh.faces
    elements = [PlyElement.describe(vertex, "vertex"), PlyElement.describe(face, "face")]
    PlyData(elements, byte_order="<").write(str(path))
    viewloom_logger.log_file_written(str(path), {"vertices": mesh.vertex_count, "faces": mesh.face_count})


def read_mesh(path: PathLike) -> TriangleMesh:
    ply = _read_ply(path)
    if "vertex" not in _element_names(ply):
        raise FileFormatError(f"{path} has no vertex element")
    data = ply["vertex"].data
    names = data.dtype.names or ()
    _require(names, ("x", "y", "z"), path)
    vertices = np.stack([data["x"], data["y"], data["z"]], axis=1).astype(np.float64)
    colors = None
    if all(name in names for name in ("red", "green", "blue")):
        colors = np.stack([data["red"], data["green"], data["blue"]], axis=1).astype(np.float64) / 255.0
    normals = None
    if all(name in names for name in ("nx", "ny", "nz")):
        normals = np.stack([data["nx"], data["ny"], data["nz"]], axis=1).astype(np.float64)

    faces = np.zeros((0, 3), dtype=np.int64)
    if "face" in _element_names(ply) and ply["face"].count:
        face_data = ply["face"].data
        field = "vertex_indices" if "vertex_indices" in face_data.dtype.names else "vertex_index"
        if field not in face_data.dtype.names:
            raise UnknownPropertyError(f"{path} faces have no vertex_indices list")
        rows = face_data[field]
        if any(len(row) != 3 for row in rows):
            raise FileFormatError(f"{path} contains non-triangular faces")
        faces = np.vstack(rows).astype(np.int64)
    try:
        return TriangleMesh(vertices, faces, colors, normals)
    except InvalidArgumentError as e:
        raise FileFormatError(f"{path}: {e}") from e


def write_obj(path: PathLike, mesh: TriangleMesh) -> None:
    lines = [f"v {x:.9g} {y:.9g} {z:.9g}" for x, y, z in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")
    viewloom_logger.log_file_written(str(path), {"faces": mesh.face_count})


# Depth (PFM) -------------------------------------------------------------------

def encode_pfm(depth: np.ndarray) -> bytes:
    """Grayscale PFM, little-endian (scale -1), rows stored bottom-up."""
    depth = np.asarray(depth)
    if depth.ndim != 2:
        raise InvalidArgumentError(f"Depth must be 2-D, got shape {depth.shape}")
    height, width = depth.shape
    header = f"Pf\n{width} {height}\n-1.0\n".encode("ascii")
    return header + np.flipud(depth).astype("<f4").tobytes()


def decode_pfm(payload: bytes) -> np.ndarray:
    stream = io.BytesIO(payload)
    try:
        kind = stream.readline().strip()
        dims = stream.readline().split()
        scale = float(stream.readline().strip())
        width, height = int(dims[0]), int(dims[1])
    except (ValueError, IndexError) as e:
        raise FileFormatError(f"Malformed PFM header: {e}") from e
    if kind == b"PF":
        raise FileFormatError("Color PFM is not a depth map")
    if kind != b"Pf" or len(dims) != 2 or width <= 0 or height <= 0 or scale == 0:
        raise FileFormatError("Malformed PFM header")
    dtype = "<f4" if scale < 0 else ">f4"
    body = stream.read()
    expected = width * height * 4
    if len(body) != expected:
        raise FileFormatError(f"PFM body has {len(body)} bytes, expected {expected}")
    values = np.frombuffer(body, dtype=dtype).reshape(height, width)
    return np.flipud(values).astype(np.float32)


def write_depth(path: PathLike, depth: np.ndarray) -> None:
    Path(path).write_bytes(encode_pfm(depth))
    viewloom_logger.log_file_written(str(path))


def read_depth(path: PathLike) -> np.ndarray:
    return decode_pfm(Path(path).read_bytes())


# Images (PNG) ------------------------------------------------------------------

def encode_png(color: np.ndarray, mask: Optional[np.ndarray] = None) -> bytes:
    """8-bit RGBA; alpha is 255 inside the mask and 0 outside."""
    color = np.asarray(color)
    if color.ndim != 3 or color.shape[2] != 3:
        raise InvalidArgumentError(f"Color must be HxWx3, got shape {color.shape}")
    alpha = np.full(color.shape[:2], 255, dtype=np.uint8)
    if mask is not None:
        alpha = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    rgba = np.dstack([to_uint8(color), alpha])
    buffer = io.BytesIO()
    Image.fromarray(rgba).save(buffer, format="PNG")
    return buffer.getvalue()


def _open_png(payload: bytes) -> Image.Image:
    if payload[:8] != PNG_SIGNATURE or len(payload) < 33:
        raise FileFormatError("Not a PNG file")
    bit_depth = payload[24]
    if bit_depth != 8:
        raise FileFormatError(f"Only 8-bit PNG images are supported, got {bit_depth}-bit")
    try:
        image = Image.open(io.BytesIO(payload))
        image.load()
    except (UnidentifiedImageError, OSError, SyntaxError) as e:
        raise FileFormatError(f"Cannot decode PNG: {e}") from e
    return image


def decode_png(payload: bytes) -> Tuple[np.ndarray, np.ndarray]:
    """Return (color in [0, 1], mask); images without alpha are fully masked."""
    image = _open_png(payload)
    if image.mode not in ("RGBA", "RGB"):
        image = image.convert("RGBA")
    pixels = np.asarray(image)
    color = pixels[..., :3].astype(np.float64) / 255.0
    if image.mode == "RGBA":
        mask = pixels[..., 3] >= 128
    else:
        mask = np.ones(pixels.shape[:2], dtype=bool)
    return color, mask


def write_image(path: PathLike, color: np.ndarray, mask: Optional[np.ndarray] = None) -> None:
    Path(path).write_bytes(encode_png(color, mask))
    viewloom_logger.log_file_written(str(path))


def read_image(path: PathLike) -> Tuple[np.ndarray, np.ndarray]:
    return decode_png(Path(path).read_bytes())


def write_mask(path: PathLike, mask: np.ndarray) -> None:
    mask = np.asarray(mask, dtype=bool)
    write_image(path, np.repeat(mask[..., None], 3, axis=2).astype(np.float64), mask)


def read_mask(path: PathLike) -> np.ndarray:
    """Binary mask from alpha (RGBA) or from gray level >= 128 otherwise."""
    image = _open_png(Path(path).read_bytes())
    if image.mode in ("RGBA", "LA"):
        return np.asarray(image)[..., -1] >= 128
    return np.asarray(image.convert("L")) >= 128


# JSON and checksums ------------------------------------------------------------

def _json_default(value: Any):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, Path):
        return str(value)
    raise TypeError(f"Object of type {type(value).__name__} is not JSON serializable")


def dumps_json(data: Any) -> str:
    return json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n"


def write_json(path: PathLike, data: Any) -> None:
    Path(path).write_text(dumps_json(data))
    viewloom_logger.log_file_written(str(path))


def read_json(path: PathLike) -> Dict[str, Any]:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise FileFormatError(f"Invalid JSON in {path}: {e}") from e


def file_checksum(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as handle:
        for chunk in iter(lambda: handle.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
