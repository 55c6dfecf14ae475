"""Composite box-regression loss, differential learning rates, and the
warmup + cosine schedule.

The loss is lambda_l1 * mean|b - bhat| + lambda_giou * (1 - GIoU(b, bhat))
on boxes normalized to [0, 1] by the search-crop size, so the weights are
resolution-independent. Backbone parameter groups train at a fixed fraction
of the base rate; everything else (adapters, fusion, head) at the base rate.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .boxes import BBox
from .errors import ConfigurationError, NumericError, UsageError
from .tensor import Tensor

# parameter-name prefixes that form the reduced-rate group
BACKBONE_PREFIXES = ("tir_backbone.", "depth_backbone.")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class LossConfig:
    lambda_l1: float = 5.0
    lambda_giou: float = 2.0

    def __post_init__(self):
        if self.lambda_l1 < 0 or self.lambda_giou < 0:
            raise ConfigurationError("loss weights must be >= 0")


@dataclass
class OptimizerConfig:
    eta_base: float = 1e-4
    backbone_factor: float = 0.1
    warmup_epochs: int = 10
    total_epochs: int = 100
    eta_min: float = 1e-6
    weight_decay: float = 1e-4

    def __post_init__(self):
        if not (0 < self.backbone_factor <= 1):
            raise ConfigurationError(f"backbone_factor must be in (0, 1], got {self.backbone_factor}")
        if not (0 <= self.warmup_epochs < self.total_epochs):
            raise ConfigurationError(
                f"need 0 <= warmup_epochs < total_epochs, got {self.warmup_epochs}/{self.total_epochs}")
        if not (0 <= self.eta_min < self.eta_base):
            raise ConfigurationError(f"need 0 <= eta_min < eta_base, got {self.eta_min}/{self.eta_base}")


@dataclass
class ParamGroup:
    name: str  # "backbone" | "fresh"
    param_names: list
    lr_factor: float


# ---------------------------------------------------------------------------
# loss
# ---------------------------------------------------------------------------

def box_tensor(box, scale: float = 1.0) -> Tensor:
    """Constant (4,) tensor [cx, cy, w, h] / scale from a BBox or array."""
    if isinstance(box, BBox):
        arr = np.array([box.x, box.y, box.w, box.h], dtype=np.float64)
    else:
        arr = np.asarray(box, dtype=np.float64).reshape(4)
    return Tensor(arr / scale)


def _elem(box4: Tensor, i: int) -> Tensor:
    return T.narrow(box4, 0, i, 1)


def giou_t(a4: Tensor, b4: Tensor) -> Tensor:
    """Differentiable GIoU of two (4,) center-format boxes; scalar tensor.

    Mirrors boxes.giou operation-for-operation so the two routes agree to
    float precision.
    """
    for name, b in (("a", a4), ("b", b4)):
        wh = b.data[2:]
        if (wh <= 0).any():
            raise UsageError(f"giou: box {name} has non-positive size {wh}")
    ax, ay, aw, ah = (_elem(a4, i) for i in range(4))
    bx, by, bw, bh = (_elem(b4, i) for i in range(4))
    half = 0.5
    ax1, ax2 = ax - aw * half, ax + aw * half
    ay1, ay2 = ay - ah * half, ay + ah * half
    bx1, bx2 = bx - bw * half, bx + bw * half
    by1, by2 = by - bh * half, by + bh * half
    iw = T.minimum(ax2, bx2) - T.maximum(ax1, bx1)
    ih = T.minimum(ay2, by2) - T.maximum(ay1, by1)
    inter = T.relu(iw) * T.relu(ih)
    union = aw * ah + bw * bh - inter
    cw = T.maximum(ax2, bx2) - T.minimum(ax1, bx1)
    ch = T.maximum(ay2, by2) - T.minimum(ay1, by1)
    enclosing = cw * ch
    out = T.div(inter, union) - T.div(enclosing - union, enclosing)
    return T.reshape(out, ())


def total_loss(pred, gt, cfg: LossConfig) -> Tensor:
    """lambda_l1 * mean|pred - gt| + lambda_giou * (1 - GIoU).

    Both boxes must already be normalized to [0, 1] by the search-crop
    size; either may be a BBox or a (4,) tensor (gradients flow through
    tensor inputs only).
    """
    p = pred if isinstance(pred, Tensor) else box_tensor(pred)
    g = gt if isinstance(gt, Tensor) else box_tensor(gt)
    l1 = T.mean(T.abs_(T.sub(p, g)))
    giou_term = 1.0 - giou_t(p, g)
    return T.scale(l1, cfg.lambda_l1) + T.scale(giou_term, cfg.lambda_giou)


# ---------------------------------------------------------------------------
# schedule
# ---------------------------------------------------------------------------

def lr_at_epoch(epoch: int, cfg: OptimizerConfig) -> float:
    """Linear warmup to eta_base over the first warmup_epochs, then cosine
    annealing down to exactly eta_min at the final epoch."""
    if not (0 <= epoch < cfg.total_epochs):
        raise UsageError(f"epoch {epoch} outside [0, {cfg.total_epochs})")
    w = cfg.warmup_epochs
    if epoch < w:
        return cfg.eta_base * (epoch + 1) / w
    span = cfg.total_epochs - 1 - w
    if span <= 0:
        return cfg.eta_base
    return cfg.eta_min + 0.5 * (cfg.eta_base - cfg.eta_min) * (
        1.0 + math.cos(math.pi * (epoch - w) / span))


def make_param_groups(net, cfg: OptimizerConfig) -> list[ParamGroup]:
    """Partition parameter names into the backbone group (factor k) and the
    fresh group (factor 1)."""
    backbone, fresh = [], []
    for name in net.params:
        (backbone if name.startswith(BACKBONE_PREFIXES) else fresh).append(name)
    if not backbone:
        warnings.warn("no parameters matched the backbone prefixes; backbone group is empty")
    return [
        ParamGroup("backbone", backbone, cfg.backbone_factor),
        ParamGroup("fresh", fresh, 1.0),
    ]


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------

@dataclass
class StepReport:
    lrs: dict
    grad_norm: float


class Optimizer:
    """Adam with decoupled weight decay over named parameter groups.

    mode="sgd" switches to the plain update theta -= lr * (g + wd * theta),
    which the analytic unit tests rely on.
    """

    def __init__(self, params: dict, groups: list[ParamGroup], cfg: OptimizerConfig,
                 mode: str = "adam"):
        if mode not in ("adam", "sgd"):
            raise UsageError(f"unknown optimizer mode {mode!r}")
        for g in groups:
            for name in g.param_names:
                if name not in params:
                    raise UsageError(f"group {g.name} names unknown parameter {name}")
        self.params = params
        self.groups = groups
        self.cfg = cfg
        self.mode = mode
        self.t = 0
        self._m = {k: np.zeros_like(p.data) for k, p in params.items()}
        self._v = {k: np.zeros_like(p.data) for k, p in params.items()}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self, epoch: int) -> StepReport:
        base = lr_at_epoch(epoch, self.cfg)
        wd = self.cfg.weight_decay
        sq_sum = 0.0
        for g in self.groups:
            for name in g.param_names:
                p = self.params[name]
                if p.grad is None:
                    continue
                if not np.isfinite(p.grad).all():
                    raise NumericError(f"non-finite gradient in {name}; aborting step")
                sq_sum += float((p.grad * p.grad).sum())
        self.t += 1
        for g in self.groups:
            lr = base * g.lr_factor
            for name in g.param_names:
                p = self.params[name]
                grad = p.grad if p.grad is not None else np.zeros_like(p.data)
                if self.mode == "sgd":
                    p.data -= lr * (grad + wd * p.data)
                    continue
                m = self._m[name]
                v = self._v[name]
                m *= ADAM_BETA1
                m += (1 - ADAM_BETA1) * grad
                v *= ADAM_BETA2
                v += (1 - ADAM_BETA2) * grad * grad
                mhat = m / (1 - ADAM_BETA1 ** self.t)
                vhat = v / (1 - ADAM_BETA2 ** self.t)
                p.data -= lr * (mhat / (np.sqrt(vhat) + ADAM_EPS) + wd * p.data)
        return StepReport(
            lrs={g.name: base * g.lr_factor for g in self.groups},
            grad_norm=math.sqrt(sq_sum))
