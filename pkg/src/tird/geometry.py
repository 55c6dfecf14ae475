"""LiDAR point clouds projected into camera-aligned 2D depth maps.

Pipeline: rigid extrinsic transform into the camera frame, pinhole
projection, nearest-integer pixel assignment with a z-buffer (smallest
depth wins), and an optional window-min densify pass for sparse returns.
Depth maps round-trip through 16-bit PGM files at millimeter resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, FileFormatError, UsageError

# points closer than this along the optical axis are culled; the projection
# divides by z so a cutoff is mandatory
DEFAULT_Z_MIN = 0.1
# depth-to-network normalization ceiling (meters); indoor scale
DEFAULT_MAX_RANGE = 10.0
DEPTH_QUANTUM = 0.001  # PGM stores round(depth_m / DEPTH_QUANTUM)


@dataclass
class PointCloud:
    """(N, 3) xyz points in meters, sensor frame."""

    points: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.isfinite(pts).all():
            raise UsageError("point cloud contains non-finite coordinates")
        self.points = pts

    def __len__(self) -> int:
        return self.points.shape[0]


@dataclass
class Extrinsic:
    """Rigid transform p_cam = R @ p_lidar + t."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(r.T @ r, np.eye(3), atol=1e-9):
            raise ConfigurationError("extrinsic rotation is not orthonormal (R^T R != I at 1e-9)")
        self.rotation = r
        self.translation = t

    @classmethod
    def identity(cls) -> "Extrinsic":
        return cls(np.eye(3), np.zeros(3))


@dataclass
class CameraModel:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 256
    height: int = 192
    extrinsic: Extrinsic = field(default_factory=Extrinsic.identity)
    z_min: float = DEFAULT_Z_MIN

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ConfigurationError(f"focal lengths must be positive, got fx={self.fx} fy={self.fy}")
        if not (0 <= self.cx < self.width) or not (0 <= self.cy < self.height):
            raise ConfigurationError(
                f"principal point ({self.cx}, {self.cy}) outside {self.width}x{self.height} frame")


@dataclass
class DepthMap:
    """Per-pixel depth in meters; 0 means no LiDAR return."""

    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim != 2:
            raise UsageError(f"depth map must be 2-d, got shape {v.shape}")
        if not np.isfinite(v).all() or (v < 0).any():
            raise UsageError("depth map values must be finite and non-negative")
        self.values = v

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


def transform_points(cloud: PointCloud, extrinsic: Extrinsic) -> PointCloud:
    """Apply p' = R p + t to every point."""
    return PointCloud(cloud.points @ extrinsic.rotation.T + extrinsic.translation)


def project_point(p, cam: CameraModel):
    """Pinhole-project one camera-frame point.

    Returns (u, v, depth) when the point is in front of the camera
    (z > z_min) and (u, v) lies inside [0, width) x [0, height);
    otherwise None. Depth is the z coordinate.
    """
    x, y, z = float(p[0]), float(p[1]), float(p[2])
    if z <= cam.z_min:
        return None
    u = cam.fx * x / z + cam.cx
    v = cam.fy * y / z + cam.cy
    if not (0.0 <= u < cam.width and 0.0 <= v < cam.height):
        return None
    return (u, v, z)


def _nearest_pixel(u: float, v: float, cam: CameraModel):
    """Round to nearest integer pixel; drop the half-open boundary sliver
    that rounds past the last row/column."""
    col = math.floor(u + 0.5)
    row = math.floor(v + 0.5)
    if 0 <= col < cam.width and 0 <= row < cam.height:
        return row, col
    return None


def render_depth_map(cloud: PointCloud, cam: CameraModel) -> DepthMap:
    """Project every point; each pixel keeps the smallest depth (z-buffer)."""
    values = np.zeros((cam.height, cam.width), dtype=np.float64)
    pts = transform_points(cloud, cam.extrinsic).points
    for p in pts:
        hit = project_point(p, cam)
        if hit is None:
            continue
        u, v, depth = hit
        px = _nearest_pixel(u, v, cam)
        if px is None:
            continue
        row, col = px
        if values[row, col] == 0.0 or depth < values[row, col]:
            values[row, col] = depth
    return DepthMap(values)


def back_project(row: int, col: int, depth: float, cam: CameraModel) -> np.ndarray:
    """Camera-frame point whose projection is exactly pixel (row, col) at depth."""
    x = (col - cam.cx) * depth / cam.fx
    y = (row - cam.cy) * depth / cam.fy
    return np.array([x, y, depth])


def densify(dmap: DepthMap, radius: int) -> DepthMap:
    """Fill each empty pixel with the minimum nonzero depth in a
    (2*radius+1)^2 window, if any; radius 0 is the identity."""
    if radius < 0:
        raise UsageError(f"densify radius must be >= 0, got {radius}")
    if radius == 0:
        return DepthMap(dmap.values.copy())
    v = dmap.values
    h, w = v.shape
    big = np.where(v > 0.0, v, np.inf)
    padded = np.pad(big, radius, constant_values=np.inf)
    win = np.lib.stride_tricks.sliding_window_view(padded, (2 * radius + 1, 2 * radius + 1))
    wmin = win.reshape(h, w, -1).min(axis=2)
    out = v.copy()
    empty = v == 0.0
    fill = empty & np.isfinite(wmin)
    out[fill] = wmin[fill]
    return DepthMap(out)


def normalize_depth(values: np.ndarray, max_range: float = DEFAULT_MAX_RANGE) -> np.ndarray:
    """Map meters to [0, 1] network units; 0 (no return) stays 0."""
    return np.clip(values / max_range, 0.0, 1.0)


# ---------------------------------------------------------------------------
# file formats
# ---------------------------------------------------------------------------

def read_point_cloud(path) -> PointCloud:
    """Plain-text cloud: one `x y z` line per point, '#' comments allowed."""
    pts = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 3:
                raise FileFormatError(f"{path}:{lineno}: expected 3 floats, got {len(parts)} fields")
            try:
                pts.append([float(p) for p in parts])
            except ValueError as exc:
                raise FileFormatError(f"{path}:{lineno}: {exc}") from None
    arr = np.array(pts, dtype=np.float64).reshape(-1, 3)
    if arr.size and not np.isfinite(arr).all():
        raise FileFormatError(f"{path}: non-finite coordinate")
    return PointCloud(arr)


def write_pgm16(path, samples: np.ndarray) -> None:
    """Binary 16-bit PGM (P5, maxval 65535), samples most-significant-byte first."""
    arr = np.asarray(samples)
    if arr.ndim != 2:
        raise UsageError(f"PGM needs a 2-d array, got {arr.shape}")
    if arr.dtype != np.uint16:
        if (arr < 0).any() or (arr > 65535).any():
            raise UsageError("PGM samples out of uint16 range")
        arr = arr.astype(np.uint16)
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(arr.astype(">u2").tobytes())


def read_pgm16(path) -> np.ndarray:
    with open(path, "rb") as fh:
        blob = fh.read()
    tokens = []
    i = 0
    while len(tokens) < 4:
        if i >= len(blob):
            raise FileFormatError(f"{path}: truncated PGM header")
        ch = blob[i:i + 1]
        if ch == b"#":
            i = blob.find(b"\n", i)
            if i < 0:
                raise FileFormatError(f"{path}: unterminated PGM comment")
            continue
        if ch.isspace():
            i += 1
            continue
        j = i
        while j < len(blob) and not blob[j:j + 1].isspace():
            j += 1
        tokens.append(blob[i:j])
        i = j
    i += 1  # single whitespace after maxval
    if tokens[0] != b"P5":
        raise FileFormatError(f"{path}: not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 65535:
        raise FileFormatError(f"{path}: expected maxval 65535, got {maxval}")
    data = blob[i:i + 2 * w * h]
    if len(data) != 2 * w * h:
        raise FileFormatError(f"{path}: truncated PGM data ({len(data)} of {2 * w * h} bytes)")
    return np.frombuffer(data, dtype=">u2").reshape(h, w).astype(np.uint16)


def write_depth_pgm(path, dmap: DepthMap) -> None:
    """Depth map to PGM: value = round(depth_m / 1 mm), clamped to 65535."""
    q = np.minimum(np.round(dmap.values / DEPTH_QUANTUM), 65535.0)
    write_pgm16(path, q.astype(np.uint16))


def read_depth_pgm(path) -> DepthMap:
    return DepthMap(read_pgm16(path).astype(np.float64) * DEPTH_QUANTUM)
