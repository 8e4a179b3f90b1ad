"""
Raster Module
Deterministic z-buffer rasterizer, vertex normals and the synthetic test corpus
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Tuple

import numpy as np

from camera import CameraView
from error_handlers import InvalidArgumentError
from performance_utils import perf_monitor

logger = logging.getLogger(__name__)

NEAR_PLANE = 1e-6
CANDIDATE_CHUNK = 1 << 22
CORPUS_NAMES = ("sphere", "tunic", "tee", "panel")


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Indexed triangles with per-vertex colors and optional normals."""

    vertices: np.ndarray
    faces: np.ndarray
    colors: Optional[np.ndarray] = None
    normals: Optional[np.ndarray] = None

    def __post_init__(self):
        vertices = np.asarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        faces = np.asarray(self.faces, dtype=np.int64).reshape(-1, 3)
        colors = self.colors
        if colors is None:
            colors = np.full_like(vertices, 0.5)
        colors = np.asarray(colors, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(vertices)):
            raise InvalidArgumentError("Mesh vertices must be finite")
        if len(colors) != len(vertices):
            raise InvalidArgumentError(f"Got {len(colors)} colors for {len(vertices)} vertices")
        if colors.size and (colors.min() < 0.0 or colors.max() > 1.0):
            raise InvalidArgumentError("Mesh colors must lie in [0, 1]")
        if faces.size and (faces.min() < 0 or faces.max() >= len(vertices)):
            raise InvalidArgumentError("Face index out of range")
        normals = self.normals
        if normals is not None:
            normals = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
            if len(normals) != len(vertices):
                raise InvalidArgumentError(f"Got {len(normals)} normals for {len(vertices)} vertices")
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "faces", faces)
        object.__setattr__(self, "colors", colors)
        object.__setattr__(self, "normals", normals)

    @property
    def vertex_count(self) -> int:
        return len(self.vertices)

    @property
    def face_count(self) -> int:
        return len(self.faces)

    def bbox(self) -> Tuple[np.ndarray, np.ndarray]:
        if not len(self.vertices):
            return np.zeros(3), np.zeros(3)
        return self.vertices.min(axis=0), self.vertices.max(axis=0)

    def bbox_diagonal(self) -> float:
        lo, hi = self.bbox()
        return float(np.linalg.norm(hi - lo))

    def face_areas(self) -> np.ndarray:
        v = self.vertices[self.faces]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def transformed(self, scale: float = 1.0, offset=(0.0, 0.0, 0.0)) -> "TriangleMesh":
        return TriangleMesh(self.vertices * scale + np.asarray(offset, dtype=np.float64),
                            self.faces, self.colors, self.normals)

    def subset_faces(self, keep: np.ndarray) -> "TriangleMesh":
        """Keep the selected faces and drop vertices nothing references anymore."""
        faces = self.faces[np.asarray(keep)]
        used = np.unique(faces)
        remap = np.full(len(self.vertices), -1, dtype=np.int64)
        remap[used] = np.arange(len(used))
        normals = None if self.normals is None else self.normals[used]
        return TriangleMesh(self.vertices[used], remap[faces], self.colors[used], normals)


@dataclass(frozen=True, eq=False)
class RGBDView:
    """Complete color, camera-space depth and foreground mask at a camera."""

    color: np.ndarray
    depth: np.ndarray
    mask: np.ndarray
    view: CameraView

    def __post_init__(self):
        height, width = self.view.shape
        if self.color.shape != (height, width, 3):
            raise InvalidArgumentError(f"Color shape {self.color.shape} does not match {height}x{width}")
        if self.depth.shape != (height, width) or self.mask.shape != (height, width):
            raise InvalidArgumentError("Depth and mask must match the view size")
        valid = np.isfinite(self.depth) & (self.depth > 0)
        if np.any(self.mask.astype(bool) != valid):
            raise InvalidArgumentError("Mask must be set exactly where depth is positive and finite")

    @classmethod
    def empty(cls, view: CameraView) -> "RGBDView":
        height, width = view.shape
        return cls(np.zeros((height, width, 3)), np.zeros((height, width)),
                   np.zeros((height, width), dtype=bool), view)

    @classmethod
    def from_arrays(cls, color: np.ndarray, depth: np.ndarray, view: CameraView,
                    mask: Optional[np.ndarray] = None) -> "RGBDView":
        """Build a view whose mask is (mask AND depth > 0); depth is zeroed elsewhere."""
        depth = np.asarray(depth, dtype=np.float64)
        valid = np.isfinite(depth) & (depth > 0)
        if mask is not None:
            valid &= np.asarray(mask, dtype=bool)
        return cls(np.asarray(color, dtype=np.float64), np.where(valid, depth, 0.0), valid, view)


class VertexNormals(NamedTuple):
    normals: np.ndarray
    isolated: np.ndarray  # indices of vertices whose normal is reported as zero


@perf_monitor.time_function("rasterize")
def rasterize(mesh: TriangleMesh, view: CameraView) -> RGBDView:
    """Render flat vertex-color albedo and camera depth with a z-buffer.

    Both triangle sides are drawn. Equal depths keep the lower face index.
    A triangle with any vertex at camera depth <= NEAR_PLANE is skipped whole, not clipped.
    """
    height, width = view.shape
    k = view.intrinsics
    zbuf = np.full(height * width, np.inf)
    cbuf = np.zeros((height * width, 3))
    if mesh.face_count == 0:
        return RGBDView.empty(view)

    cam = view.pose.to_camera(mesh.vertices)
    vz = cam[:, 2]
    safe_z = np.where(vz > NEAR_PLANE, vz, 1.0)
    vu = k.fx * cam[:, 0] / safe_z + k.cx
    vv = k.fy * cam[:, 1] / safe_z + k.cy

    faces = mesh.faces
    in_front = np.all(vz[faces] > NEAR_PLANE, axis=1)
    fu = vu[faces]
    fv = vv[faces]
    x0 = np.maximum(np.ceil(fu.min(axis=1)), 0).astype(np.int64)
    x1 = np.minimum(np.floor(fu.max(axis=1)), width - 1).astype(np.int64)
    y0 = np.maximum(np.ceil(fv.min(axis=1)), 0).astype(np.int64)
    y1 = np.minimum(np.floor(fv.max(axis=1)), height - 1).astype(np.int64)
    span_x = x1 - x0 + 1
    span_y = y1 - y0 + 1
    area2 = (fu[:, 1] - fu[:, 0]) * (fv[:, 2] - fv[:, 0]) - (fu[:, 2] - fu[:, 0]) * (fv[:, 1] - fv[:, 0])
    drawable = in_front & (span_x > 0) & (span_y > 0) & (area2 != 0)
    counts = np.where(drawable, span_x * span_y, 0)

    face_ids = np.nonzero(counts)[0]
    if len(face_ids) == 0:
        return RGBDView.empty(view)
    cumulative = np.cumsum(counts[face_ids])
    start = 0
    while start < len(face_ids):
        base = cumulative[start - 1] if start else 0
        stop = int(np.searchsorted(cumulative, base + CANDIDATE_CHUNK, side="right"))
        stop = max(stop, start + 1)
        _rasterize_chunk(face_ids[start:stop], counts, x0, y0, span_x, fu, fv, area2,
                         vz, faces, mesh.colors, width, zbuf, cbuf)
        start = stop

    mask = np.isfinite(zbuf)
    depth = np.where(mask, zbuf, 0.0).reshape(height, width)
    color = np.clip(cbuf, 0.0, 1.0).reshape(height, width, 3)
    return RGBDView(color, depth, mask.reshape(height, width), view)


def _rasterize_chunk(chunk, counts, x0, y0, span_x, fu, fv, area2, vz, faces, colors, width, zbuf, cbuf):
    n = counts[chunk]
    face = np.repeat(chunk, n)
    offsets = np.repeat(np.cumsum(n) - n, n)
    local = np.arange(int(n.sum()), dtype=np.int64) - offsets
    px = x0[face] + local % span_x[face]
    py = y0[face] + local // span_x[face]

    pu = px.astype(np.float64)
    pv = py.astype(np.float64)
    u = fu[face]
    v = fv[face]
    w0 = ((u[:, 1] - pu) * (v[:, 2] - pv) - (u[:, 2] - pu) * (v[:, 1] - pv)) / area2[face]
    w1 = ((u[:, 2] - pu) * (v[:, 0] - pv) - (u[:, 0] - pu) * (v[:, 2] - pv)) / area2[face]
    w2 = 1.0 - w0 - w1
    inside = (w0 >= 0) & (w1 >= 0) & (w2 >= 0)
    if not np.any(inside):
        return
    face = face[inside]
    pixel = py[inside] * width + px[inside]
    bary = np.stack([w0[inside], w1[inside], w2[inside]], axis=1)

    tri = faces[face]
    inv_z = bary / vz[tri]
    inv_depth = inv_z.sum(axis=1)
    depth = 1.0 / inv_depth

    order = np.lexsort((face, depth, pixel))
    pixel_sorted = pixel[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pixel_sorted[1:] != pixel_sorted[:-1]
    winners = order[first]

    target = pixel[winners]
    better = depth[winners] < zbuf[target]
    winners = winners[better]
    target = target[better]
    weights = inv_z[winners] / inv_depth[winners, None]
    zbuf[target] = depth[winners]
    cbuf[target] = np.einsum("nk,nkc->nc", weights, colors[tri[winners]])


def mesh_vertex_normals(mesh: TriangleMesh) -> VertexNormals:
    """Area-weighted vertex normals; vertices without area get zero and are reported."""
    v = mesh.vertices
    f = mesh.faces
    accumulated = np.zeros_like(v)
    if len(f):
        face_normals = np.cross(v[f[:, 1]] - v[f[:, 0]], v[f[:, 2]] - v[f[:, 0]])
        for corner in range(3):
            np.add.at(accumulated, f[:, corner], face_normals)
    lengths = np.linalg.norm(accumulated, axis=1)
    isolated = lengths <= 1e-300
    normals = np.zeros_like(v)
    normals[~isolated] = accumulated[~isolated] / lengths[~isolated, None]
    if np.any(isolated):
        logger.debug(f"{int(isolated.sum())} vertices without incident area")
    return VertexNormals(normals, np.nonzero(isolated)[0])


# Synthetic corpus -----------------------------------------------------------

def icosphere(subdivisions: int = 3, radius: float = 1.0) -> Tuple[np.ndarray, np.ndarray]:
    phi = (1.0 + 5.0 ** 0.5) / 2.0
    verts: List[Tuple[float, float, float]] = [
        (-1, phi, 0), (1, phi, 0), (-1, -phi, 0), (1, -phi, 0),
        (0, -1, phi), (0, 1, phi), (0, -1, -phi), (0, 1, -phi),
        (phi, 0, -1), (phi, 0, 1), (-phi, 0, -1), (-phi, 0, 1),
    ]
    faces = [
        (0, 11, 5), (0, 5, 1), (0, 1, 7), (0, 7, 10), (0, 10, 11),
        (1, 5, 9), (5, 11, 4), (11, 10, 2), (10, 7, 6), (7, 1, 8),
        (3, 9, 4), (3, 4, 2), (3, 2, 6), (3, 6, 8), (3, 8, 9),
        (4, 9, 5), (2, 4, 11), (6, 2, 10), (8, 6, 7), (9, 8, 1),
    ]
    points = [np.array(p, dtype=np.float64) / np.linalg.norm(p) for p in verts]
    for _ in range(subdivisions):
        midpoints: Dict[Tuple[int, int], int] = {}

        def midpoint(a: int, b: int) -> int:
            key = (a, b) if a < b else (b, a)
            if key not in midpoints:
                m = points[a] + points[b]
                points.append(m / np.linalg.norm(m))
                midpoints[key] = len(points) - 1
            return midpoints[key]

        refined = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            refined.extend([(a, ab, ca), (b, bc, ab), (c, ca, bc), (ab, bc, ca)])
        faces = refined
    return np.array(points) * radius, np.array(faces, dtype=np.int64)


def _tube(radius: float, y_min: float, y_max: float, segments: int, rings: int) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Open cylinder around +Y; also returns (ring, segment) grid indices per vertex."""
    angles = 2.0 * np.pi * np.arange(segments) / segments
    heights = np.linspace(y_min, y_max, rings + 1)
    hh, aa = np.meshgrid(heights, angles, indexing="ij")
    verts = np.stack([radius * np.sin(aa), hh, radius * np.cos(aa)], axis=-1).reshape(-1, 3)
    ring, seg = np.meshgrid(np.arange(rings), np.arange(segments), indexing="ij")
    a = ring * segments + seg
    b = ring * segments + (seg + 1) % segments
    c = a + segments
    d = b + segments
    faces = np.concatenate([np.stack([a, c, b], -1).reshape(-1, 3),
                            np.stack([b, c, d], -1).reshape(-1, 3)])
    grid = np.stack(np.meshgrid(np.arange(rings + 1), np.arange(segments), indexing="ij"), -1).reshape(-1, 2)
    return verts, faces, grid


def _checker(grid: np.ndarray, cell: int, first, second) -> np.ndarray:
    parity = ((grid[:, 0] // cell) + (grid[:, 1] // cell)) % 2
    return np.where(parity[:, None] == 0, np.asarray(first, dtype=np.float64), np.asarray(second, dtype=np.float64))


def _sphere(subdivisions: int) -> TriangleMesh:
    verts, faces = icosphere(subdivisions)
    colors = 0.25 + 0.5 * (verts + 1.0) / 2.0
    return TriangleMesh(verts, faces, colors)


def _tunic(segments: int, rings: int) -> TriangleMesh:
    verts, faces, grid = _tube(0.5, -0.7, 0.7, segments, rings)
    colors = _checker(grid, 4, (0.80, 0.25, 0.20), (0.95, 0.90, 0.80))
    return TriangleMesh(verts, faces, colors)


def _tee(segments: int, rings: int, sleeves: int) -> TriangleMesh:
    if sleeves not in (0, 1, 2):
        raise InvalidArgumentError(f"A tee has 0, 1 or 2 sleeves, got {sleeves}")
    verts, faces, grid = _tube(0.35, -0.5, 0.5, segments, rings)
    parts_v = [verts]
    parts_f = [faces]
    parts_c = [_checker(grid, 4, (0.20, 0.35, 0.70), (0.85, 0.85, 0.90))]
    sides = [1.0, -1.0][:sleeves]
    sleeve_segments = max(segments // 2, 8)
    sleeve_rings = max(rings // 3, 4)
    for side in sides:
        sv, sf, sg = _tube(0.15, 0.33, 0.95, sleeve_segments, sleeve_rings)
        # lay the tube along +/-X at shoulder height
        sv = np.stack([side * sv[:, 1], 0.3 + sv[:, 0], sv[:, 2]], axis=-1)
        if side < 0:
            sf = sf[:, ::-1]
        parts_f.append(sf + sum(len(p) for p in parts_v))
        parts_v.append(sv)
        parts_c.append(_checker(sg, 2, (0.90, 0.70, 0.20), (0.30, 0.20, 0.15)))
    return TriangleMesh(np.concatenate(parts_v), np.concatenate(parts_f), np.concatenate(parts_c))


def _panel(segments: int, rings: int) -> TriangleMesh:
    xs = np.linspace(-0.6, 0.6, segments + 1)
    ys = np.linspace(-0.5, 0.5, rings + 1)
    yy, xx = np.meshgrid(ys, xs, indexing="ij")
    zz = 0.25 * np.cos(np.pi * xx / 1.2)
    verts = np.stack([xx, yy, zz], axis=-1).reshape(-1, 3)
    row, col = np.meshgrid(np.arange(rings), np.arange(segments), indexing="ij")
    a = row * (segments + 1) + col
    b = a + 1
    c = a + segments + 1
    d = c + 1
    faces = np.concatenate([np.stack([a, b, c], -1).reshape(-1, 3), np.stack([b, d, c], -1).reshape(-1, 3)])
    stripe = (np.arange(segments + 1) // 3) % 2
    colors = np.where(np.tile(stripe, rings + 1)[:, None] == 0,
                      np.array([0.25, 0.60, 0.35]), np.array([0.95, 0.95, 0.85]))
    return TriangleMesh(verts, faces, colors)


def synthetic_corpus(name: str, subdivisions: int = 3, segments: int = 64, rings: int = 32,
                     sleeves: int = 2) -> TriangleMesh:
    """Named stand-in garments: sphere, tunic (open tube), tee (tube + sleeves), panel (open sheet)."""
    if name == "sphere":
        return _sphere(subdivisions)
    if name == "tunic":
        return _tunic(segments, rings)
    if name == "tee":
        return _tee(segments, rings, sleeves)
    if name == "panel":
        return _panel(segments, rings)
    raise InvalidArgumentError(f"Unknown corpus mesh '{name}', expected one of {', '.join(CORPUS_NAMES)}")
