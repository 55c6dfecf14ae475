"""Template/search-pair training loop for both net variants.

Each sample crops the template from a sequence's first frame and a search
region around a jittered ground-truth box of a random later frame; the
loss is the composite l1 + GIoU objective on the decoded box, normalized
by the search-crop size. One optimizer step per batch; the per-epoch log
carries (epoch, mean loss, fresh lr, backbone lr).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from . import tensor as T
from .boxes import BBox
from .config import TrainSettings
from .errors import UsageError
from .model import decode_box_t
from .optim import LossConfig, Optimizer, OptimizerConfig, box_tensor, make_param_groups, total_loss
from .rng import Rng
from .tracking import SEARCH_SCALE, TEMPLATE_SCALE, crop_region


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    lr_fresh: float
    lr_backbone: float

    def line(self) -> str:
        return f"{self.epoch},{self.loss:.6f},{self.lr_fresh:.12g},{self.lr_backbone:.12g}"


LOG_HEADER = "epoch,loss,lr_fresh,lr_backbone"


def _jittered_anchor(gt: BBox, settings: TrainSettings, rng: Rng) -> BBox:
    dx = rng.uniform(-settings.center_jitter, settings.center_jitter) * gt.w
    dy = rng.uniform(-settings.center_jitter, settings.center_jitter) * gt.h
    s = math.exp(rng.uniform(-settings.scale_jitter, settings.scale_jitter))
    return BBox(gt.x + dx, gt.y + dy, gt.w * s, gt.h * s)


class _SequenceBank:
    """Pre-cropped templates plus frame access for sampling."""

    def __init__(self, sequences: list, net, max_range: float):
        self.entries = []
        for seq in sequences:
            pairs = seq.frame_pairs(max_range)
            if len(pairs) < 2:
                raise UsageError(f"sequence {seq.name} too short to train on")
            template, _ = crop_region(pairs[0], seq.gts[0], TEMPLATE_SCALE, net.cfg.template_size)
            self.entries.append((template, pairs, seq.gts))

    def sample(self, rng: Rng):
        template, pairs, gts = self.entries[rng.integers(0, len(self.entries))]
        t = rng.integers(1, len(pairs))
        return template, pairs[t], gts[t]


def sample_loss(net, template, frame, gt: BBox, loss_cfg: LossConfig,
                settings: TrainSettings, rng: Rng):
    """Loss tensor for one training sample."""
    anchor = _jittered_anchor(gt, settings, rng)
    search, mapping = crop_region(frame, anchor, SEARCH_SCALE, net.cfg.search_size)
    gt_crop = mapping.to_crop(gt)
    maps = net.forward_maps(template, search)
    pred = T.scale(decode_box_t(maps, net.cfg.backbone_stride), 1.0 / net.cfg.search_size)
    return total_loss(pred, box_tensor(gt_crop, scale=net.cfg.search_size), loss_cfg)


def train_net(net, sequences: list, loss_cfg: LossConfig, opt_cfg: OptimizerConfig,
              settings: TrainSettings, seed: int, max_range: float = 10.0,
              on_epoch=None) -> list:
    """Train in place; returns the per-epoch records."""
    bank = _SequenceBank(sequences, net, max_range)
    rng = Rng(seed).fork("train")
    groups = make_param_groups(net, opt_cfg)
    opt = Optimizer(net.params, groups, opt_cfg, mode=settings.optimizer_mode)
    records = []
    for epoch in range(opt_cfg.total_epochs):
        epoch_losses = []
        lrs = None
        for _ in range(settings.steps_per_epoch):
            acc = None
            for _ in range(settings.batch_size):
                template, frame, gt = bank.sample(rng)
                loss = sample_loss(net, template, frame, gt, loss_cfg, settings, rng)
                acc = loss if acc is None else T.add(acc, loss)
            batch_loss = T.scale(acc, 1.0 / settings.batch_size)
            opt.zero_grad()
            T.backward(batch_loss)
            report = opt.step(epoch)
            lrs = report.lrs
            epoch_losses.append(batch_loss.item())
        rec = EpochRecord(epoch, sum(epoch_losses) / len(epoch_losses),
                          lrs["fresh"], lrs["backbone"])
        records.append(rec)
        if on_epoch is not None:
            on_epoch(rec)
    return records
