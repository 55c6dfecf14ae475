"""The dual-stream TIR-D tracking network.

Per modality: a 1->3 channel adaptation layer (3x3 conv, ReLU, 1x1
bottleneck) feeding a strided conv backbone. Template and search features
from both streams are flattened into one token sequence with learned
positional and source embeddings, fused by a pre-norm transformer encoder,
and read out by a single-query decoder. A 5-layer conv head predicts
top-left / bottom-right corner probability maps over the search grid;
boxes are decoded as soft-argmax expectations of those maps.

A single-stream variant (one modality, two token segments) exists so a
source-domain model can be pre-trained and its weights transplanted into
both streams of the dual net (see the checkpoint module).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import tensor as T
from .boxes import BBox
from .errors import ConfigurationError, UsageError
from .frames import FramePair
from .rng import Rng
from .tensor import Tensor

MLP_RATIO = 4  # encoder feed-forward width, in units of d_model


@dataclass
class ModelConfig:
    adapter_mid_channels: int = 16
    backbone_channels: list = field(default_factory=lambda: [16, 32, 64])
    backbone_stride: int = 16
    d_model: int = 64
    n_heads: int = 4
    n_fusion_layers: int = 2
    template_size: int = 64
    search_size: int = 128
    head_channels: int = 32

    def __post_init__(self):
        if self.d_model % self.n_heads != 0:
            raise ConfigurationError(
                f"d_model {self.d_model} not divisible by n_heads {self.n_heads}")
        s = self.backbone_stride
        if s < 2 or (s & (s - 1)) != 0:
            raise ConfigurationError(f"backbone_stride must be a power of two >= 2, got {s}")
        for name, size in (("template_size", self.template_size), ("search_size", self.search_size)):
            if size % s != 0:
                raise ConfigurationError(f"{name} {size} not divisible by backbone_stride {s}")
        if self.n_fusion_layers < 1:
            raise ConfigurationError("n_fusion_layers must be >= 1")

    @property
    def n_stages(self) -> int:
        return int(round(math.log2(self.backbone_stride)))

    @property
    def template_grid(self) -> int:
        return self.template_size // self.backbone_stride

    @property
    def search_grid(self) -> int:
        return self.search_size // self.backbone_stride


@dataclass
class CornerMaps:
    """Top-left / bottom-right corner logits over the search feature grid."""

    tl: Tensor
    br: Tensor


# ---------------------------------------------------------------------------
# parameter construction
# ---------------------------------------------------------------------------

class _Builder:
    """Collects named parameters; fresh weights are uniform(-a, a) with
    a = sqrt(6 / (fan_in + fan_out)), biases zero, norms at identity."""

    def __init__(self, rng: Rng):
        self.rng = rng
        self.params: dict[str, Tensor] = {}

    def _put(self, name: str, data: np.ndarray) -> None:
        if name in self.params:
            raise UsageError(f"duplicate parameter name {name}")
        self.params[name] = Tensor(data, requires_grad=True)

    def uniform(self, name: str, shape: tuple, fan_in: int, fan_out: int) -> None:
        a = math.sqrt(6.0 / (fan_in + fan_out))
        self._put(name, self.rng.fork(name).uniform(-a, a, shape))

    def conv(self, name: str, cout: int, cin: int, k: int) -> None:
        self.uniform(f"{name}.w", (cout, cin, k, k), cin * k * k, cout * k * k)
        self._put(f"{name}.b", np.zeros(cout))

    def linear(self, name: str, cin: int, cout: int) -> None:
        self.uniform(f"{name}.w", (cin, cout), cin, cout)
        self._put(f"{name}.b", np.zeros(cout))

    def norm(self, name: str, c: int) -> None:
        self._put(f"{name}.g", np.ones(c))
        self._put(f"{name}.b", np.zeros(c))

    def embedding(self, name: str, shape: tuple) -> None:
        c = shape[-1]
        self.uniform(name, shape, c, c)


def _build_adapter(b: _Builder, prefix: str, cfg: ModelConfig) -> None:
    b.conv(f"{prefix}.conv1", cfg.adapter_mid_channels, 1, 3)
    b.conv(f"{prefix}.conv2", 3, cfg.adapter_mid_channels, 1)


def _stage_channels(cfg: ModelConfig) -> list:
    chans = cfg.backbone_channels
    return [chans[min(i, len(chans) - 1)] for i in range(cfg.n_stages)]


def _build_backbone(b: _Builder, prefix: str, cfg: ModelConfig) -> None:
    cin = 3
    for i, cout in enumerate(_stage_channels(cfg)):
        b.conv(f"{prefix}.stage{i}", cout, cin, 3)
        cin = cout
    b.conv(f"{prefix}.proj", cfg.d_model, cin, 1)


def _build_fusion(b: _Builder, cfg: ModelConfig, n_sources: int) -> None:
    c = cfg.d_model
    # content tokens are normalized before embeddings are added, otherwise
    # the learned embeddings drown out the (initially small) conv features
    b.norm("fusion.in_norm", c)
    b.embedding("fusion.pos_z", (cfg.template_grid ** 2, c))
    b.embedding("fusion.pos_x", (cfg.search_grid ** 2, c))
    b.embedding("fusion.src_embed", (n_sources, c))
    for i in range(cfg.n_fusion_layers):
        base = f"fusion.enc{i}"
        b.norm(f"{base}.ln1", c)
        for proj in ("q", "k", "v", "o"):
            b.linear(f"{base}.attn.{proj}", c, c)
        b.norm(f"{base}.ln2", c)
        b.linear(f"{base}.mlp.fc1", c, MLP_RATIO * c)
        b.linear(f"{base}.mlp.fc2", MLP_RATIO * c, c)
    b.embedding("fusion.query", (1, c))
    b.norm("fusion.dec.ln1", c)
    # the pre-norm encoder's residual stream is unbounded, so every consumer
    # of its output applies its own normalization
    b.norm("fusion.dec.mem_norm", c)
    for proj in ("q", "k", "v", "o"):
        b.linear(f"fusion.dec.attn.{proj}", c, c)
    b.norm("fusion.dec.ln2", c)
    b.linear("fusion.dec.mlp.fc1", c, MLP_RATIO * c)
    b.linear("fusion.dec.mlp.fc2", MLP_RATIO * c, c)


def _build_head(b: _Builder, cfg: ModelConfig) -> None:
    b.norm("head.tok_norm", cfg.d_model)
    b.norm("head.query_norm", cfg.d_model)
    cin = cfg.d_model
    for i in range(4):
        b.conv(f"head.conv{i}", cfg.head_channels, cin, 3)
        cin = cfg.head_channels
    b.conv("head.conv4", 2, cin, 3)


# ---------------------------------------------------------------------------
# forward pieces
# ---------------------------------------------------------------------------

def _conv_layer(p: dict, name: str, x: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    return T.conv2d(x, p[f"{name}.w"], stride=stride, padding=padding, bias=p[f"{name}.b"])


def adapt(x: Tensor, p: dict, prefix: str) -> Tensor:
    """1 x H x W sensor channel -> 3 x H x W pseudo-RGB features."""
    if len(x.shape) != 3 or x.shape[0] != 1:
        raise UsageError(f"adapter expects a single-channel 1xHxW input, got {x.shape}")
    mid = T.relu(_conv_layer(p, f"{prefix}.conv1", x, padding=1))
    return _conv_layer(p, f"{prefix}.conv2", mid)


def backbone_forward(x: Tensor, p: dict, prefix: str, cfg: ModelConfig) -> Tensor:
    """3 x H x W -> d_model x H/s x W/s via stride-2 conv stages.

    Each stage pads one row/column on the bottom/right so even extents
    halve exactly (the conv itself demands an integral output size).
    """
    if len(x.shape) != 3 or x.shape[0] != 3:
        raise UsageError(f"backbone expects 3xHxW, got {x.shape}")
    h, w = x.shape[1:]
    s = cfg.backbone_stride
    if h % s != 0 or w % s != 0:
        raise ConfigurationError(f"backbone input {h}x{w} not divisible by stride {s}")
    out = x
    for i in range(cfg.n_stages):
        out = T.pad2d(out, (0, 1, 0, 1))
        out = T.relu(_conv_layer(p, f"{prefix}.stage{i}", out, stride=2))
    return _conv_layer(p, f"{prefix}.proj", out)


def _linear(p: dict, name: str, x: Tensor) -> Tensor:
    return T.add(T.matmul(x, p[f"{name}.w"]), p[f"{name}.b"])


def _norm(p: dict, name: str, x: Tensor) -> Tensor:
    return T.layer_norm(x, p[f"{name}.g"], p[f"{name}.b"])


def _attention(p: dict, base: str, q_in: Tensor, kv_in: Tensor, n_heads: int) -> Tensor:
    """Multi-head attention; q_in (Nq, C) attends over kv_in (Nkv, C)."""
    c = q_in.shape[1]
    dh = c // n_heads
    q = _linear(p, f"{base}.q", q_in)
    k = _linear(p, f"{base}.k", kv_in)
    v = _linear(p, f"{base}.v", kv_in)
    heads = []
    for h in range(n_heads):
        qh = T.narrow(q, 1, h * dh, dh)
        kh = T.narrow(k, 1, h * dh, dh)
        vh = T.narrow(v, 1, h * dh, dh)
        scores = T.scale(T.matmul(qh, T.transpose2d(kh)), 1.0 / math.sqrt(dh))
        heads.append(T.matmul(T.softmax(scores, axis=1), vh))
    return _linear(p, f"{base}.o", T.concat(heads, axis=1))


def _mlp(p: dict, base: str, x: Tensor) -> Tensor:
    return _linear(p, f"{base}.fc2", T.relu(_linear(p, f"{base}.fc1", x)))


def _encoder_block(p: dict, base: str, x: Tensor, n_heads: int) -> Tensor:
    normed = _norm(p, f"{base}.ln1", x)
    x = T.add(x, _attention(p, f"{base}.attn", normed, normed, n_heads))
    return T.add(x, _mlp(p, f"{base}.mlp", _norm(p, f"{base}.ln2", x)))


def _decoder(p: dict, memory: Tensor, n_heads: int) -> Tensor:
    """Single learned query cross-attending to the encoded sequence; (C,)."""
    q = p["fusion.query"]
    mem = _norm(p, "fusion.dec.mem_norm", memory)
    q = T.add(q, _attention(p, "fusion.dec.attn", _norm(p, "fusion.dec.ln1", q), mem, n_heads))
    q = T.add(q, _mlp(p, "fusion.dec.mlp", _norm(p, "fusion.dec.ln2", q)))
    return T.reshape(q, (q.shape[1],))


def _tokens(feat: Tensor) -> Tensor:
    """(C, h, w) feature map -> (h*w, C) row-major token matrix."""
    c = feat.shape[0]
    return T.transpose2d(T.reshape(feat, (c, feat.shape[1] * feat.shape[2])))


def _embed(p: dict, feat: Tensor, pos: Tensor, src_idx: int) -> Tensor:
    """Normalized content tokens + positional + source embeddings."""
    src_embed = p["fusion.src_embed"]
    c = src_embed.shape[1]
    tok = _norm(p, "fusion.in_norm", _tokens(feat))
    src = T.reshape(T.narrow(src_embed, 0, src_idx, 1), (c,))
    return T.add(T.add(tok, pos), src)


def fuse(feat_z_tir: Tensor, feat_z_d: Tensor, feat_x_tir: Tensor, feat_x_d: Tensor,
         p: dict, cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Fuse the four feature maps into search tokens + a target query vector.

    Tokens from template/search x TIR/depth get positional + source
    embeddings, are concatenated into one sequence, and pass through the
    encoder. Returns the TIR-search and depth-search output segments summed
    elementwise, plus the decoder output.
    """
    for f in (feat_z_tir, feat_z_d, feat_x_tir, feat_x_d):
        if f.shape[0] != cfg.d_model:
            raise UsageError(f"fuse expects {cfg.d_model}-channel features, got {f.shape}")
    n_z = feat_z_tir.shape[1] * feat_z_tir.shape[2]
    n_x = feat_x_tir.shape[1] * feat_x_tir.shape[2]
    seq = T.concat([
        _embed(p, feat_z_tir, p["fusion.pos_z"], 0),
        _embed(p, feat_z_d, p["fusion.pos_z"], 1),
        _embed(p, feat_x_tir, p["fusion.pos_x"], 2),
        _embed(p, feat_x_d, p["fusion.pos_x"], 3),
    ], axis=0)
    for i in range(cfg.n_fusion_layers):
        seq = _encoder_block(p, f"fusion.enc{i}", seq, cfg.n_heads)
    x_tir = T.narrow(seq, 0, 2 * n_z, n_x)
    x_d = T.narrow(seq, 0, 2 * n_z + n_x, n_x)
    return T.add(x_tir, x_d), _decoder(p, seq, cfg.n_heads)


def fuse_single(feat_z: Tensor, feat_x: Tensor, p: dict, cfg: ModelConfig) -> tuple[Tensor, Tensor]:
    """Single-modality variant: template + search segments only."""
    n_z = feat_z.shape[1] * feat_z.shape[2]
    n_x = feat_x.shape[1] * feat_x.shape[2]
    seq = T.concat([
        _embed(p, feat_z, p["fusion.pos_z"], 0),
        _embed(p, feat_x, p["fusion.pos_x"], 1),
    ], axis=0)
    for i in range(cfg.n_fusion_layers):
        seq = _encoder_block(p, f"fusion.enc{i}", seq, cfg.n_heads)
    return T.narrow(seq, 0, n_z, n_x), _decoder(p, seq, cfg.n_heads)


def corner_head(search_tokens: Tensor, query: Tensor, p: dict, cfg: ModelConfig) -> CornerMaps:
    """Similarity-modulated search tokens -> 5-layer conv stack -> corner logits."""
    g = cfg.search_grid
    if search_tokens.shape != (g * g, cfg.d_model):
        raise UsageError(
            f"corner head expects {g * g} tokens of width {cfg.d_model}, got {search_tokens.shape}")
    tok = _norm(p, "head.tok_norm", search_tokens)
    q = T.reshape(_norm(p, "head.query_norm", T.reshape(query, (1, cfg.d_model))), (cfg.d_model, 1))
    att = T.scale(T.matmul(tok, q), 1.0 / math.sqrt(cfg.d_model))
    mod = T.row_scale(tok, att)
    fmap = T.reshape(T.transpose2d(mod), (cfg.d_model, g, g))
    for i in range(4):
        fmap = T.relu(_conv_layer(p, f"head.conv{i}", fmap, padding=1))
    logits = _conv_layer(p, "head.conv4", fmap, padding=1)
    tl = T.reshape(T.narrow(logits, 0, 0, 1), (g, g))
    br = T.reshape(T.narrow(logits, 0, 1, 1), (g, g))
    return CornerMaps(tl, br)


def _soft_argmax(logits: Tensor, stride: int) -> tuple[Tensor, Tensor]:
    """Expected (x, y) under the softmax of a corner map, cell-center convention."""
    h, w = logits.shape
    prob = T.reshape(T.softmax(T.reshape(logits, (1, h * w)), axis=1), (h * w,))
    cols, rows = np.meshgrid(np.arange(w), np.arange(h))
    coord_x = Tensor((cols.reshape(-1) + 0.5) * stride)
    coord_y = Tensor((rows.reshape(-1) + 0.5) * stride)
    return T.sum_(T.mul(prob, coord_x)), T.sum_(T.mul(prob, coord_y))


def decode_box_t(maps: CornerMaps, stride: int) -> Tensor:
    """Differentiable decode: (4,) tensor [cx, cy, w, h] in crop pixels,
    w and h clamped to >= 1."""
    x_tl, y_tl = _soft_argmax(maps.tl, stride)
    x_br, y_br = _soft_argmax(maps.br, stride)
    cx = T.scale(T.add(x_tl, x_br), 0.5)
    cy = T.scale(T.add(y_tl, y_br), 0.5)
    w = T.clamp_min(T.sub(x_br, x_tl), 1.0)
    h = T.clamp_min(T.sub(y_br, y_tl), 1.0)
    return T.stack_scalars([cx, cy, w, h])


def decode_box(maps: CornerMaps, search_size: int, stride: int) -> BBox:
    del search_size  # coordinates are already in crop pixels; kept for symmetry
    v = decode_box_t(maps, stride).data
    return BBox(float(v[0]), float(v[1]), float(v[2]), float(v[3]))


# ---------------------------------------------------------------------------
# nets
# ---------------------------------------------------------------------------

def _as_input(channel: np.ndarray) -> Tensor:
    return Tensor(channel[None, :, :])


class DualStreamNet:
    """TIR + depth tracker; parameters live in a flat dotted-name dict."""

    n_sources = 4

    def __init__(self, cfg: ModelConfig, rng: Rng):
        self.cfg = cfg
        b = _Builder(rng)
        _build_adapter(b, "tir_adapter", cfg)
        _build_adapter(b, "depth_adapter", cfg)
        _build_backbone(b, "tir_backbone", cfg)
        _build_backbone(b, "depth_backbone", cfg)
        _build_fusion(b, cfg, self.n_sources)
        _build_head(b, cfg)
        self.params = b.params

    def _features(self, pair: FramePair) -> tuple[Tensor, Tensor]:
        p = self.cfg
        tir = backbone_forward(adapt(_as_input(pair.tir), self.params, "tir_adapter"),
                               self.params, "tir_backbone", p)
        dep = backbone_forward(adapt(_as_input(pair.depth), self.params, "depth_adapter"),
                               self.params, "depth_backbone", p)
        return tir, dep

    def forward_maps(self, template: FramePair, search: FramePair) -> CornerMaps:
        z_tir, z_d = self._features(template)
        x_tir, x_d = self._features(search)
        search_tokens, query = fuse(z_tir, z_d, x_tir, x_d, self.params, self.cfg)
        return corner_head(search_tokens, query, self.params, self.cfg)

    def forward_track(self, template: FramePair, search: FramePair) -> tuple[BBox, CornerMaps]:
        maps = self.forward_maps(template, search)
        return decode_box(maps, self.cfg.search_size, self.cfg.backbone_stride), maps


class SingleStreamNet:
    """One-modality tracker used for source-domain pre-training and the
    single-modality baselines. `channel` picks which half of a FramePair
    it consumes."""

    n_sources = 2

    def __init__(self, cfg: ModelConfig, rng: Rng, channel: str = "tir"):
        self.cfg = cfg
        self.channel = channel
        b = _Builder(rng)
        _build_adapter(b, "adapter", cfg)
        _build_backbone(b, "backbone", cfg)
        _build_fusion(b, cfg, self.n_sources)
        _build_head(b, cfg)
        self.params = b.params

    def _features(self, pair: FramePair) -> Tensor:
        x = _as_input(pair.channel(self.channel))
        return backbone_forward(adapt(x, self.params, "adapter"), self.params, "backbone", self.cfg)

    def forward_maps(self, template: FramePair, search: FramePair) -> CornerMaps:
        z = self._features(template)
        x = self._features(search)
        search_tokens, query = fuse_single(z, x, self.params, self.cfg)
        return corner_head(search_tokens, query, self.params, self.cfg)

    def forward_track(self, template: FramePair, search: FramePair) -> tuple[BBox, CornerMaps]:
        maps = self.forward_maps(template, search)
        return decode_box(maps, self.cfg.search_size, self.cfg.backbone_stride), maps
