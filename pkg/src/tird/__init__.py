"""tird: thermal-infrared + LiDAR-depth single object tracker.

A desk-scale dual-stream tracker: LiDAR point clouds projected to depth
maps, per-modality adaptation layers, shared-architecture backbones seeded
by cross-modal weight transfer, a transformer fusion encoder, corner-map
box regression, and a full tracking-metrics harness. The numeric core is a
from-scratch float64 autodiff tensor, so every gradient is checkable
against finite differences.
"""

__version__ = "0.1.0"

from .boxes import BBox, giou, iou
from .tensor import Tensor, backward

__all__ = ["BBox", "Tensor", "backward", "giou", "iou", "__version__"]
