"""Deterministic synthetic TIR-D sequences with exact ground truth.

The target is an anisotropic Gaussian intensity blob moving along a
linear or sinusoidal path over a warm background, paired with a
constant-depth elliptical region nearer than the background plane. The
ground-truth box is the blob's 2-sigma extent. Distractors are static
warm blobs that may share the target's intensity but never its depth,
which makes the "low thermal contrast, depth disambiguates" scenario
constructible. Everything is a pure function of the scene spec.

On disk: root/seq_NNNN/{tir,depth}/FFFFFF.pgm + groundtruth.txt + spec.txt.
TIR PGMs store round(value * 65535) of the [0,1] intensity; depth PGMs
store millimeters (see geometry).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields as dc_fields
from pathlib import Path

import numpy as np

from .boxes import BBox
from .errors import DatasetError, SceneSpecError, UsageError
from .frames import FramePair
from .geometry import (DEFAULT_MAX_RANGE, DepthMap, read_depth_pgm, read_pgm16,
                       write_depth_pgm, write_pgm16)
from .rng import Rng
from .tracking import read_trace, write_trace

TIR_BACKGROUND = 0.25
DEPTH_BACKGROUND_M = 6.0
TARGET_ASPECT = 1.4  # box height / width
CONTRAST_MARGIN = 1.01  # amplitude headroom so the box-mean contract holds strictly


@dataclass
class SceneSpec:
    seed: int = 0
    frames: int = 60
    width: int = 256
    height: int = 192
    path_type: str = "linear"  # or "sinusoid"
    speed: float = 2.0  # px/frame
    size_min: float = 28.0  # target box width range, px
    size_max: float = 36.0
    contrast: float = 0.2  # gt-box mean TIR intensity above background
    depth_offset: float = 1.5  # target is this much nearer than the background, m
    distractors: int = 0
    tir_noise: float = 0.01
    depth_noise: float = 0.02  # m
    lidar_sparsity: float = 0.0

    def __post_init__(self):
        if self.frames < 1:
            raise SceneSpecError("need at least one frame")
        if self.path_type not in ("linear", "sinusoid"):
            raise SceneSpecError(f"unknown path type {self.path_type!r}")
        if not (0 <= self.lidar_sparsity < 1):
            raise SceneSpecError(f"lidar_sparsity must be in [0, 1), got {self.lidar_sparsity}")
        if not (0 <= self.contrast <= 1):
            raise SceneSpecError(f"contrast must be in [0, 1], got {self.contrast}")
        if self.size_min <= 0 or self.size_max < self.size_min:
            raise SceneSpecError(f"bad size range [{self.size_min}, {self.size_max}]")
        if not (0 < self.depth_offset < DEPTH_BACKGROUND_M):
            raise SceneSpecError(f"depth_offset must be in (0, {DEPTH_BACKGROUND_M}), got {self.depth_offset}")


@dataclass
class Sequence:
    """Generated or loaded sequence; depth is kept in meters until it is
    normalized for the network."""

    name: str
    tir: list  # [0,1] arrays HxW
    depth_m: list  # meter arrays HxW
    gts: list  # BBox per frame
    spec: SceneSpec | None = None

    def __len__(self) -> int:
        return len(self.tir)

    def frame_pairs(self, max_range: float = DEFAULT_MAX_RANGE) -> list:
        return [FramePair(t, np.clip(d / max_range, 0.0, 1.0), i)
                for i, (t, d) in enumerate(zip(self.tir, self.depth_m))]


# ---------------------------------------------------------------------------
# path and footprint
# ---------------------------------------------------------------------------

def _target_track(spec: SceneSpec) -> list:
    """Per-frame gt boxes; raises when any box leaves the frame."""
    n = spec.frames
    cx0, cy0 = spec.width / 2.0, spec.height / 2.0
    boxes = []
    for t in range(n):
        phase = t / (n - 1) if n > 1 else 0.0
        w = spec.size_min + (spec.size_max - spec.size_min) * 0.5 * (1 - math.cos(2 * math.pi * phase))
        h = w * TARGET_ASPECT
        if spec.path_type == "linear":
            ang = math.radians(20.0)
            off = spec.speed * (t - (n - 1) / 2.0)
            x = cx0 + off * math.cos(ang)
            y = cy0 + off * math.sin(ang)
        else:
            x = cx0 + spec.speed * (t - (n - 1) / 2.0)
            period = max(n / 2.0, 8.0)
            y = cy0 + (spec.height / 8.0) * math.sin(2 * math.pi * t / period)
        box = BBox(x, y, w, h)
        if box.x1 < 0 or box.y1 < 0 or box.x2 > spec.width or box.y2 > spec.height:
            raise SceneSpecError(
                f"target path exits the frame at frame {t}: box {box} vs {spec.width}x{spec.height}")
        boxes.append(box)
    return boxes


def _pixel_grid(spec: SceneSpec):
    ys, xs = np.mgrid[0:spec.height, 0:spec.width]
    return xs + 0.5, ys + 0.5  # pixel-center coordinates


def _gaussian_blob(xs, ys, box: BBox) -> np.ndarray:
    """Unit-peak anisotropic Gaussian whose 2-sigma extent is the box."""
    sx, sy = box.w / 4.0, box.h / 4.0
    return np.exp(-0.5 * (((xs - box.x) / sx) ** 2 + ((ys - box.y) / sy) ** 2))


def _box_mask(xs, ys, box: BBox) -> np.ndarray:
    return (xs >= box.x1) & (xs < box.x2) & (ys >= box.y1) & (ys < box.y2)


def _distractor_field(spec: SceneSpec, xs, ys) -> np.ndarray:
    """Static warm clutter blobs with target-like intensity."""
    if spec.distractors == 0:
        return np.zeros_like(xs)
    rng = Rng(spec.seed).fork("distractors")
    peak_scale = spec.contrast / 0.35 if spec.contrast > 0 else 0.3
    fld = np.zeros_like(xs)
    for _ in range(spec.distractors):
        dx = rng.uniform(0.1 * spec.width, 0.9 * spec.width)
        dy = rng.uniform(0.1 * spec.height, 0.9 * spec.height)
        dw = rng.uniform(spec.size_min, spec.size_max)
        amp = peak_scale * rng.uniform(0.8, 1.2)
        fld += amp * _gaussian_blob(xs, ys, BBox(dx, dy, dw, dw * TARGET_ASPECT))
    return fld


def gen_sequence(spec: SceneSpec, name: str = "seq") -> Sequence:
    """Render the TIR + depth sequence for a scene spec (pure function)."""
    boxes = _target_track(spec)
    xs, ys = _pixel_grid(spec)
    distract = _distractor_field(spec, xs, ys)
    base_rng = Rng(spec.seed)
    tir_frames, depth_frames = [], []
    for t, box in enumerate(boxes):
        blob = _gaussian_blob(xs, ys, box)
        inside = _box_mask(xs, ys, box)
        f_box = float(blob[inside].mean())
        amp = CONTRAST_MARGIN * spec.contrast / f_box if spec.contrast > 0 else 0.0
        if TIR_BACKGROUND + amp > 1.0:
            raise SceneSpecError(
                f"contrast {spec.contrast} needs blob peak {TIR_BACKGROUND + amp:.3f} > 1; "
                "lower the contrast")
        tir = TIR_BACKGROUND + amp * blob + distract
        if spec.tir_noise > 0:
            tir = tir + base_rng.fork(f"tir_noise/{t}").normal(0.0, spec.tir_noise, tir.shape)
        tir_frames.append(np.clip(tir, 0.0, 1.0))

        sx, sy = box.w / 4.0, box.h / 4.0
        ellipse = (((xs - box.x) / sx) ** 2 + ((ys - box.y) / sy) ** 2) <= 4.0
        depth = np.full_like(xs, DEPTH_BACKGROUND_M)
        depth[ellipse] = DEPTH_BACKGROUND_M - spec.depth_offset
        if spec.depth_noise > 0:
            depth = depth + base_rng.fork(f"depth_noise/{t}").normal(0.0, spec.depth_noise, depth.shape)
            depth = np.maximum(depth, 0.01)
        if spec.lidar_sparsity > 0:
            drop = base_rng.fork(f"sparsity/{t}").uniform(0.0, 1.0, depth.shape) < spec.lidar_sparsity
            depth = np.where(drop, 0.0, depth)
        depth_frames.append(depth)
    return Sequence(name, tir_frames, depth_frames, boxes, spec)


def gen_single_modality(spec: SceneSpec, modality: str, name: str = "seq") -> Sequence:
    """Thermal variant is exactly gen_sequence; visible-style re-renders the
    intensity channel as a textured rectangle with edge contrast (no halo)."""
    if modality == "tir":
        return gen_sequence(spec, name)
    if modality != "visible":
        raise UsageError(f"unknown modality {modality!r} (expected 'tir' or 'visible')")
    seq = gen_sequence(spec, name)
    xs, ys = _pixel_grid(spec)
    distract = _distractor_field(spec, xs, ys)
    base_rng = Rng(spec.seed)
    bg = 0.45
    texture = 0.5 + 0.5 * np.sign(np.sin(2 * math.pi * xs / 8.0) * np.sin(2 * math.pi * ys / 8.0))
    vis_frames = []
    for t, box in enumerate(seq.gts):
        rect = _box_mask(xs, ys, box)
        vis = bg + distract * 0.5
        vis = np.where(rect, bg + spec.contrast * (0.4 + 0.6 * texture), vis)
        if spec.tir_noise > 0:
            vis = vis + base_rng.fork(f"vis_noise/{t}").normal(0.0, spec.tir_noise, vis.shape)
        vis_frames.append(np.clip(vis, 0.0, 1.0))
    return Sequence(name, vis_frames, seq.depth_m, seq.gts, spec)


# ---------------------------------------------------------------------------
# on-disk datasets
# ---------------------------------------------------------------------------

def spec_to_text(spec: SceneSpec) -> str:
    lines = []
    for f in dc_fields(spec):
        lines.append(f"{f.name}={getattr(spec, f.name)!r}".replace("'", ""))
    return "\n".join(lines) + "\n"


def spec_from_text(text: str) -> SceneSpec:
    kwargs = {}
    casts = {f.name: f.type for f in dc_fields(SceneSpec)}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        key = key.strip()
        if key not in casts:
            raise DatasetError(f"unknown scene spec key {key!r}")
        if key == "path_type":
            kwargs[key] = value.strip()
        elif key in ("seed", "frames", "width", "height", "distractors"):
            kwargs[key] = int(value)
        else:
            kwargs[key] = float(value)
    return SceneSpec(**kwargs)


def write_dataset(sequences: list, root) -> None:
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    for i, seq in enumerate(sequences):
        seq_dir = root / f"seq_{i:04d}"
        (seq_dir / "tir").mkdir(parents=True, exist_ok=True)
        (seq_dir / "depth").mkdir(parents=True, exist_ok=True)
        for t, (tir, depth) in enumerate(zip(seq.tir, seq.depth_m)):
            write_pgm16(seq_dir / "tir" / f"{t:06d}.pgm",
                        np.round(np.clip(tir, 0.0, 1.0) * 65535.0).astype(np.uint16))
            write_depth_pgm(seq_dir / "depth" / f"{t:06d}.pgm", DepthMap(np.maximum(depth, 0.0)))
        write_trace(seq_dir / "groundtruth.txt", seq.gts)
        if seq.spec is not None:
            (seq_dir / "spec.txt").write_text(spec_to_text(seq.spec), encoding="utf-8")


def read_dataset(root) -> list:
    root = Path(root)
    seq_dirs = sorted(d for d in root.iterdir() if d.is_dir() and d.name.startswith("seq_"))
    if not seq_dirs:
        raise DatasetError(f"no seq_* directories under {root}")
    sequences = []
    for seq_dir in seq_dirs:
        tir_dir = seq_dir / "tir"
        depth_dir = seq_dir / "depth"
        gt_path = seq_dir / "groundtruth.txt"
        if not tir_dir.is_dir():
            raise DatasetError(f"sequence {seq_dir.name}: missing tir directory")
        if not depth_dir.is_dir():
            raise DatasetError(f"sequence {seq_dir.name}: missing depth directory")
        if not gt_path.is_file():
            raise DatasetError(f"sequence {seq_dir.name}: missing groundtruth.txt")
        tir_files = sorted(tir_dir.glob("*.pgm"))
        depth_files = sorted(depth_dir.glob("*.pgm"))
        gts = read_trace(gt_path)
        if not (len(tir_files) == len(depth_files) == len(gts)):
            raise DatasetError(
                f"sequence {seq_dir.name}: {len(tir_files)} tir / {len(depth_files)} depth "
                f"frames vs {len(gts)} groundtruth lines")
        tir = [read_pgm16(f).astype(np.float64) / 65535.0 for f in tir_files]
        depth = [read_depth_pgm(f).values for f in depth_files]
        spec_path = seq_dir / "spec.txt"
        spec = spec_from_text(spec_path.read_text(encoding="utf-8")) if spec_path.is_file() else None
        sequences.append(Sequence(seq_dir.name, tir, depth, gts, spec))
    return sequences
