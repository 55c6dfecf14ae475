"""Aligned per-frame sensor data."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import UsageError


@dataclass
class FramePair:
    """One aligned TIR + depth frame, both single-channel H x W in [0, 1]."""

    tir: np.ndarray
    depth: np.ndarray
    index: int = 0

    def __post_init__(self):
        self.tir = np.asarray(self.tir, dtype=np.float64)
        self.depth = np.asarray(self.depth, dtype=np.float64)
        if self.tir.ndim != 2 or self.tir.shape != self.depth.shape:
            raise UsageError(
                f"frame pair channels must share HxW, got {self.tir.shape} vs {self.depth.shape}")

    @property
    def height(self) -> int:
        return self.tir.shape[0]

    @property
    def width(self) -> int:
        return self.tir.shape[1]

    def channel(self, name: str) -> np.ndarray:
        if name == "tir":
            return self.tir
        if name == "depth":
            return self.depth
        raise UsageError(f"unknown channel {name!r} (expected 'tir' or 'depth')")
