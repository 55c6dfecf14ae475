"""Online tracking loop and the metric suite.

The template is cropped once from frame 0; every later frame is cropped
around the previous prediction, run through the network, and mapped back
to image coordinates. Metrics: average overlap (AO), success rate at
configurable IoU thresholds, center-distance precision, and an F-score
over present/overlapping frames.

Trace files are one line per frame, `x_tl,y_tl,w,h` in pixels (top-left
convention on disk; center format in memory), `nan,nan,nan,nan` for
frames with no prediction.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from .boxes import BBox, iou
from .errors import FileFormatError, NumericError, UsageError
from .frames import FramePair

TEMPLATE_SCALE = 2.0
SEARCH_SCALE = 5.0


@dataclass
class CropMapping:
    """Affine map between crop and image coordinates: image = origin + crop * scale."""

    x0: float
    y0: float
    scale: float

    def to_image(self, box: BBox) -> BBox:
        if box.is_absent:
            return box
        return BBox(self.x0 + box.x * self.scale, self.y0 + box.y * self.scale,
                    box.w * self.scale, box.h * self.scale)

    def to_crop(self, box: BBox) -> BBox:
        if box.is_absent:
            return box
        return BBox((box.x - self.x0) / self.scale, (box.y - self.y0) / self.scale,
                    box.w / self.scale, box.h / self.scale)

    def point_to_image(self, u: float, v: float) -> tuple[float, float]:
        return self.x0 + u * self.scale, self.y0 + v * self.scale

    def point_to_crop(self, x: float, y: float) -> tuple[float, float]:
        return (x - self.x0) / self.scale, (y - self.y0) / self.scale


def _bilinear(img: np.ndarray, us: np.ndarray, vs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Sample img at continuous coords (pixel (r,c) center = (c+.5, r+.5)).

    Returns (values, valid mask); out-of-support samples are 0 and invalid.
    """
    h, w = img.shape
    fu = us - 0.5
    fv = vs - 0.5
    valid = (fu >= 0) & (fu <= w - 1) & (fv >= 0) & (fv <= h - 1)
    fu = np.clip(fu, 0, w - 1)
    fv = np.clip(fv, 0, h - 1)
    c0 = np.minimum(np.floor(fu).astype(int), w - 2) if w > 1 else np.zeros_like(fu, dtype=int)
    r0 = np.minimum(np.floor(fv).astype(int), h - 2) if h > 1 else np.zeros_like(fv, dtype=int)
    du = fu - c0
    dv = fv - r0
    c1 = np.minimum(c0 + 1, w - 1)
    r1 = np.minimum(r0 + 1, h - 1)
    vals = (img[r0, c0] * (1 - du) * (1 - dv) + img[r0, c1] * du * (1 - dv)
            + img[r1, c0] * (1 - du) * dv + img[r1, c1] * du * dv)
    return np.where(valid, vals, 0.0), valid


def _crop_channel(img: np.ndarray, x0: float, y0: float, s: float, out_size: int) -> np.ndarray:
    j = np.arange(out_size)
    us = x0 + (j[None, :] + 0.5) * s + np.zeros((out_size, 1))
    vs = y0 + (j[:, None] + 0.5) * s + np.zeros((1, out_size))
    vals, valid = _bilinear(img, us, vs)
    if not valid.all():
        fill = vals[valid].mean() if valid.any() else 0.0
        vals = np.where(valid, vals, fill)
    return vals


def crop_region(frame: FramePair, box: BBox, scale: float, out_size: int) -> tuple[FramePair, CropMapping]:
    """Square crop of side scale*sqrt(w*h) centered on the box, resampled
    bilinearly to out_size x out_size; out-of-image area takes the
    per-channel mean of the in-image part."""
    if box.is_absent or box.w <= 0 or box.h <= 0:
        raise UsageError(f"crop_region: degenerate box {box}")
    side = scale * math.sqrt(box.w * box.h)
    x0 = box.x - side / 2.0
    y0 = box.y - side / 2.0
    s = side / out_size
    tir = _crop_channel(frame.tir, x0, y0, s, out_size)
    depth = _crop_channel(frame.depth, x0, y0, s, out_size)
    return FramePair(tir, depth, frame.index), CropMapping(x0, y0, s)


def track_sequence(frames: list, init_box: BBox, net,
                   template_scale: float = TEMPLATE_SCALE,
                   search_scale: float = SEARCH_SCALE) -> list:
    """Run the tracker over a sequence; output[0] is the given init box.

    A numeric failure on one frame records an absent box and tracking
    continues from the last good anchor.
    """
    if not frames:
        raise UsageError("track_sequence needs at least one frame")
    if not init_box.valid:
        raise UsageError(f"invalid init box {init_box}")
    cfg = net.cfg
    template, _ = crop_region(frames[0], init_box, template_scale, cfg.template_size)
    out = [init_box]
    anchor = init_box
    height, width = frames[0].tir.shape
    for frame in frames[1:]:
        try:
            search, mapping = crop_region(frame, anchor, search_scale, cfg.search_size)
            crop_box, _ = net.forward_track(template, search)
            if crop_box.is_absent or not all(
                    math.isfinite(v) for v in (crop_box.x, crop_box.y, crop_box.w, crop_box.h)):
                raise NumericError("non-finite prediction")
            pred = mapping.to_image(crop_box).clipped_to(width, height)
        except NumericError:
            out.append(BBox.absent())
            continue
        out.append(pred)
        anchor = pred
    return out


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

@dataclass
class EvalConfig:
    sr_thresholds: tuple = (0.5, 0.85)
    precision_radius_px: float = 20.0
    overlap_threshold: float = 0.5  # present-frame hit threshold for the F-score


@dataclass
class TrackReport:
    per_frame_iou: list
    ao: float
    sr: dict
    precision: float
    fscore: float
    fps: float = 0.0
    # present/hit counts behind precision-recall, kept so reports pool exactly
    n_frames: int = 0
    n_pred_present: int = 0
    n_gt_present: int = 0
    n_pred_hit: int = 0
    n_gt_hit: int = 0
    n_precise: int = 0


def _finish_report(ious, n_pred_present, n_gt_present, n_pred_hit, n_gt_hit,
                   n_precise, cfg: EvalConfig, fps: float) -> TrackReport:
    n = len(ious)
    ao = float(np.mean(ious)) if n else 0.0
    sr = {t: (sum(1 for v in ious if v >= t) / n if n else 0.0) for t in cfg.sr_thresholds}
    precision = n_precise / n if n else 0.0
    pr = n_pred_hit / n_pred_present if n_pred_present else 0.0
    re = n_gt_hit / n_gt_present if n_gt_present else 0.0
    fscore = 2 * pr * re / (pr + re) if (pr + re) > 0 else 0.0
    return TrackReport(per_frame_iou=list(ious), ao=ao, sr=sr, precision=precision,
                       fscore=fscore, fps=fps, n_frames=n,
                       n_pred_present=n_pred_present, n_gt_present=n_gt_present,
                       n_pred_hit=n_pred_hit, n_gt_hit=n_gt_hit, n_precise=n_precise)


def evaluate(preds: list, gts: list, cfg: EvalConfig | None = None, fps: float = 0.0) -> TrackReport:
    """Per-frame IoU trace plus AO / SR / precision / F-score.

    Frame 0 is excluded (its box is given, not predicted).
    """
    cfg = cfg or EvalConfig()
    if len(preds) != len(gts):
        raise UsageError(f"trace length mismatch: {len(preds)} predictions vs {len(gts)} truths")
    ious = []
    n_pred_present = n_gt_present = n_pred_hit = n_gt_hit = n_precise = 0
    for pred, gt in zip(preds[1:], gts[1:]):
        v = iou(pred, gt)
        ious.append(v)
        hit = v >= cfg.overlap_threshold
        if not pred.is_absent:
            n_pred_present += 1
            n_pred_hit += hit
        if not gt.is_absent:
            n_gt_present += 1
            n_gt_hit += hit
        if not pred.is_absent and not gt.is_absent:
            n_precise += pred.center_distance(gt) <= cfg.precision_radius_px
    return _finish_report(ious, n_pred_present, n_gt_present, n_pred_hit, n_gt_hit,
                          n_precise, cfg, fps)


def pool_reports(reports: list, cfg: EvalConfig | None = None) -> TrackReport:
    """Dataset-level report: pool every evaluated frame across sequences."""
    cfg = cfg or EvalConfig()
    if not reports:
        raise UsageError("pool_reports needs at least one report")
    ious = [v for r in reports for v in r.per_frame_iou]
    total_time = sum(r.n_frames / r.fps for r in reports if r.fps > 0)
    fps = (len(ious) / total_time) if total_time > 0 else 0.0
    return _finish_report(
        ious,
        sum(r.n_pred_present for r in reports),
        sum(r.n_gt_present for r in reports),
        sum(r.n_pred_hit for r in reports),
        sum(r.n_gt_hit for r in reports),
        sum(r.n_precise for r in reports),
        cfg, fps)


def format_report(reports: dict, sr_threshold: float = 0.5) -> str:
    """Text table with columns Tracker | AO | SR | F-score; AO and F-score
    to 3 decimals, SR as a percentage to 1 decimal."""
    if not reports:
        raise UsageError("format_report needs at least one report")
    for name in reports:
        if not name or not name.strip():
            raise UsageError("tracker name must be non-empty")
    width = max(len("Tracker"), *(len(n) for n in reports))
    lines = [f"{'Tracker':<{width}}  {'AO':>5}  {'SR':>4}  F-score"]
    for name, rep in reports.items():
        if sr_threshold not in rep.sr:
            raise UsageError(f"report for {name} has no SR at threshold {sr_threshold}")
        lines.append(f"{name:<{width}}  {rep.ao:.3f}  {rep.sr[sr_threshold] * 100:.1f}  {rep.fscore:.3f}")
    return "\n".join(lines)


def report_kv(report: TrackReport) -> str:
    """Machine-readable key=value block."""
    lines = [f"ao={report.ao:.6f}"]
    for t in sorted(report.sr):
        lines.append(f"sr_{t:.2f}={report.sr[t]:.6f}")
    lines.append(f"precision={report.precision:.6f}")
    lines.append(f"fscore={report.fscore:.6f}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# trace files
# ---------------------------------------------------------------------------

def write_trace(path, boxes: list) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for b in boxes:
            if b.is_absent:
                fh.write("nan,nan,nan,nan\n")
            else:
                fh.write(f"{b.x1:.17g},{b.y1:.17g},{b.w:.17g},{b.h:.17g}\n")


def read_trace(path) -> list:
    boxes = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.strip()
            if not body:
                continue
            parts = body.split(",")
            if len(parts) != 4:
                raise FileFormatError(f"{path}:{lineno}: expected 4 comma-separated values")
            try:
                x_tl, y_tl, w, h = (float(p) for p in parts)
            except ValueError as exc:
                raise FileFormatError(f"{path}:{lineno}: {exc}") from None
            if any(math.isnan(v) for v in (x_tl, y_tl, w, h)):
                boxes.append(BBox.absent())
            else:
                boxes.append(BBox(x_tl + w / 2.0, y_tl + h / 2.0, w, h))
    return boxes


class Stopwatch:
    """Wall-clock frames-per-second helper for the tracking loop."""

    def __init__(self):
        self.start = time.perf_counter()

    def fps(self, n_frames: int) -> float:
        dt = time.perf_counter() - self.start
        return n_frames / dt if dt > 0 else 0.0
