"""Dense float64 tensor with reverse-mode automatic differentiation.

Every network operation in this package is built from the primitives here,
so any model gradient can be checked against central finite differences.
Design constraints:

- float64 everywhere; desk-scale sizes make speed irrelevant and the
  gradient checks need the precision.
- values are immutable after creation: every op returns a new Tensor, so
  read-only sharing is safe and a graph can be re-walked deterministically.
- no broadcasting except bias-add over trailing axes; everything else is
  explicit reshape/transpose/concat, which keeps the backward rules auditable.
- ReLU/clamp use subgradient 0 at the kink; finite-difference checks screen
  out perturbations that cross a kink (see gradcheck).

The recorded graph is the tape: each non-leaf Tensor keeps its parents and a
local backward rule. ``backward(loss)`` topologically sorts the reachable
graph and visits each node exactly once.
"""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ShapeMismatchError, UsageError

# Name of an op whose backward rule is deliberately corrupted, or None.
# Used only as a negative control for the gradient checker.
_FAULT_OP: Optional[str] = None
_FAULT_SCALE = 1.37


def set_backward_fault(op_name: Optional[str]) -> None:
    """Corrupt the backward rule of one op (gradcheck negative control)."""
    global _FAULT_OP
    _FAULT_OP = op_name


class Tensor:
    """n-d float64 array, optionally tracked on the autodiff tape."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False,
                 _parents: tuple = (), _backward_fn: Optional[Callable] = None,
                 op: str = "leaf"):
        arr = np.asarray(data, dtype=np.float64)
        self.data = arr
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in _parents)
        self.grad: Optional[np.ndarray] = None
        self._parents = _parents if self.requires_grad else ()
        self._backward_fn = _backward_fn if self.requires_grad else None
        self.op = op

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # -- operator sugar (scalar ops accept python numbers) --

    def __add__(self, other):
        if isinstance(other, Tensor):
            return add(self, other)
        return shift(self, float(other))

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, Tensor):
            return sub(self, other)
        return shift(self, -float(other))

    def __rsub__(self, other):
        return shift(scale(self, -1.0), float(other))

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return div(self, other)
        return scale(self, 1.0 / float(other))

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def _make(data: np.ndarray, parents: tuple, backward_fn: Callable, op: str) -> Tensor:
    return Tensor(data, _parents=parents, _backward_fn=backward_fn, op=op)


def _accum(t: Tensor, g: np.ndarray, owned: bool = False) -> None:
    """Add g into t.grad. owned=True means g is freshly allocated and may be
    adopted directly; otherwise it may alias another node's grad and is copied."""
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = g if owned else np.array(g, dtype=np.float64, copy=True)
    else:
        t.grad += g


def backward(loss: Tensor) -> None:
    """Populate .grad with d(loss)/d(tensor) for every reachable tensor.

    Grads of the reachable subgraph are reset first, so calling twice from
    the same graph state yields identical results.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise UsageError("loss is not connected to any tensor with requires_grad")

    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in visited:
                stack.append((p, False))

    for node in topo:
        node.grad = None
    loss.grad = np.ones_like(loss.data)

    for node in reversed(topo):
        if node._backward_fn is None or node.grad is None:
            continue
        g = node.grad
        if _FAULT_OP is not None and node.op == _FAULT_OP:
            g = g * _FAULT_SCALE
        node._backward_fn(g)


# ---------------------------------------------------------------------------
# elementwise primitives
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise a + b. b may also be a bias whose shape matches the
    trailing axes of a (the one permitted broadcast)."""
    if a.shape == b.shape:
        out_data = a.data + b.data

        def bwd(g):
            _accum(a, g)
            _accum(b, g)

        return _make(out_data, (a, b), bwd, "add")

    k = len(b.shape)
    if k == 0 or a.shape[len(a.shape) - k:] != b.shape:
        raise ShapeMismatchError(f"add: {a.shape} vs {b.shape} (bias must match trailing axes)")
    lead = tuple(range(len(a.shape) - k))
    out_data = a.data + b.data

    def bwd(g):
        _accum(a, g)
        _accum(b, g.sum(axis=lead))

    return _make(out_data, (a, b), bwd, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"sub: {a.shape} vs {b.shape}")
    out_data = a.data - b.data

    def bwd(g):
        _accum(a, g)
        _accum(b, -g, owned=True)

    return _make(out_data, (a, b), bwd, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"mul: {a.shape} vs {b.shape}")
    out_data = a.data * b.data

    def bwd(g):
        _accum(a, g * b.data, owned=True)
        _accum(b, g * a.data, owned=True)

    return _make(out_data, (a, b), bwd, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeMismatchError(f"div: {a.shape} vs {b.shape}")
    out_data = a.data / b.data

    def bwd(g):
        _accum(a, g / b.data, owned=True)
        _accum(b, -g * a.data / (b.data * b.data), owned=True)

    return _make(out_data, (a, b), bwd, "div")


def scale(a: Tensor, c: float) -> Tensor:
    out_data = a.data * c

    def bwd(g):
        _accum(a, g * c, owned=True)

    return _make(out_data, (a,), bwd, "scale")


def shift(a: Tensor, c: float) -> Tensor:
    out_data = a.data + c

    def bwd(g):
        _accum(a, g)

    return _make(out_data, (a,), bwd, "shift")


def relu(a: Tensor) -> Tensor:
    """max(0, x); subgradient at exactly 0 is 0."""
    mask = a.data > 0.0
    out_data = np.where(mask, a.data, 0.0)

    def bwd(g):
        _accum(a, g * mask, owned=True)

    return _make(out_data, (a,), bwd, "relu")


def abs_(a: Tensor) -> Tensor:
    out_data = np.abs(a.data)
    sign = np.sign(a.data)

    def bwd(g):
        _accum(a, g * sign, owned=True)

    return _make(out_data, (a,), bwd, "abs")


def clamp_min(a: Tensor, c: float) -> Tensor:
    """max(x, c); gradient is 0 where the clamp is active (x <= c)."""
    mask = a.data > c
    out_data = np.where(mask, a.data, c)

    def bwd(g):
        _accum(a, g * mask, owned=True)

    return _make(out_data, (a,), bwd, "clamp_min")


def maximum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise max; ties route the gradient to the first argument."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"maximum: {a.shape} vs {b.shape}")
    take_a = a.data >= b.data
    out_data = np.where(take_a, a.data, b.data)

    def bwd(g):
        _accum(a, g * take_a, owned=True)
        _accum(b, g * ~take_a, owned=True)

    return _make(out_data, (a, b), bwd, "maximum")


def minimum(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise min; ties route the gradient to the first argument."""
    if a.shape != b.shape:
        raise ShapeMismatchError(f"minimum: {a.shape} vs {b.shape}")
    take_a = a.data <= b.data
    out_data = np.where(take_a, a.data, b.data)

    def bwd(g):
        _accum(a, g * take_a, owned=True)
        _accum(b, g * ~take_a, owned=True)

    return _make(out_data, (a, b), bwd, "minimum")


# ---------------------------------------------------------------------------
# reductions
# ---------------------------------------------------------------------------

def sum_(a: Tensor) -> Tensor:
    out_data = np.array(a.data.sum())

    def bwd(g):
        _accum(a, np.full_like(a.data, float(g)), owned=True)

    return _make(out_data, (a,), bwd, "sum")


def mean(a: Tensor) -> Tensor:
    n = a.data.size
    out_data = np.array(a.data.mean())

    def bwd(g):
        _accum(a, np.full_like(a.data, float(g) / n), owned=True)

    return _make(out_data, (a,), bwd, "mean")


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out_data = a.data.reshape(shape)

    def bwd(g):
        _accum(a, g.reshape(a.shape))

    return _make(out_data, (a,), bwd, "reshape")


def transpose2d(a: Tensor) -> Tensor:
    if len(a.shape) != 2:
        raise ShapeMismatchError(f"transpose2d needs a matrix, got {a.shape}")
    out_data = np.ascontiguousarray(a.data.T)

    def bwd(g):
        _accum(a, np.ascontiguousarray(g.T), owned=True)

    return _make(out_data, (a,), bwd, "transpose2d")


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice [start, start+length) along one axis."""
    idx = [slice(None)] * len(a.shape)
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out_data = np.ascontiguousarray(a.data[idx])

    def bwd(g):
        full = np.zeros_like(a.data)
        full[idx] = g
        _accum(a, full, owned=True)

    return _make(out_data, (a,), bwd, "narrow")


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * len(t.shape)
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _make(out_data, tuple(tensors), bwd, "concat")


def stack_scalars(tensors: Sequence[Tensor]) -> Tensor:
    """Pack single-element tensors into a 1-d vector."""
    parts = [reshape(t, (1,)) for t in tensors]
    return concat(parts, axis=0)


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if len(a.shape) != 2 or len(b.shape) != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: {a.shape} is not composable with {b.shape}")
    out_data = a.data @ b.data

    def bwd(g):
        _accum(a, g @ b.data.T, owned=True)
        _accum(b, a.data.T @ g, owned=True)

    return _make(out_data, (a, b), bwd, "matmul")


def channel_bias(x: Tensor, b: Tensor) -> Tensor:
    """Add per-channel bias b (C,) to a feature map x (C, H, W)."""
    if len(x.shape) != 3 or b.shape != (x.shape[0],):
        raise ShapeMismatchError(f"channel_bias: map {x.shape} vs bias {b.shape}")
    out_data = x.data + b.data[:, None, None]

    def bwd(g):
        _accum(x, g)
        _accum(b, g.sum(axis=(1, 2)), owned=True)

    return _make(out_data, (x, b), bwd, "channel_bias")


def row_scale(tokens: Tensor, scales: Tensor) -> Tensor:
    """Multiply row i of tokens (N, C) by scales[i] (shape (N, 1))."""
    if len(tokens.shape) != 2 or scales.shape != (tokens.shape[0], 1):
        raise ShapeMismatchError(f"row_scale: tokens {tokens.shape} vs scales {scales.shape}")
    out_data = tokens.data * scales.data

    def bwd(g):
        _accum(tokens, g * scales.data, owned=True)
        _accum(scales, (g * tokens.data).sum(axis=1, keepdims=True), owned=True)

    return _make(out_data, (tokens, scales), bwd, "row_scale")


# ---------------------------------------------------------------------------
# nonlinear blocks
# ---------------------------------------------------------------------------

def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-subtracted softmax along one axis; output sums to 1 there."""
    ax = axis if axis >= 0 else len(a.shape) + axis
    if ax < 0 or ax >= len(a.shape):
        raise UsageError(f"softmax: axis {axis} invalid for shape {a.shape}")
    z = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=ax, keepdims=True)

    def bwd(g):
        dot = (g * s).sum(axis=ax, keepdims=True)
        _accum(a, (g - dot) * s, owned=True)

    return _make(s, (a,), bwd, "softmax")


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis, then apply the affine (gamma, beta)."""
    c = a.shape[-1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise ShapeMismatchError(
            f"layer_norm: affine shapes {gamma.shape}/{beta.shape} do not match last axis {c}")
    mu = a.data.mean(axis=-1, keepdims=True)
    var = ((a.data - mu) ** 2).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    out_data = xhat * gamma.data + beta.data

    def bwd(g):
        _accum(beta, g.reshape(-1, c).sum(axis=0), owned=True)
        _accum(gamma, (g * xhat).reshape(-1, c).sum(axis=0), owned=True)
        gx = g * gamma.data
        m1 = gx.mean(axis=-1, keepdims=True)
        m2 = (gx * xhat).mean(axis=-1, keepdims=True)
        _accum(a, (gx - m1 - xhat * m2) * inv, owned=True)

    return _make(out_data, (a, gamma, beta), bwd, "layer_norm")


# ---------------------------------------------------------------------------
# convolution
# ---------------------------------------------------------------------------

def _im2col(x: np.ndarray, k: int, stride: int) -> np.ndarray:
    """(C, H, W) -> (C*k*k, Ho*Wo) patch matrix for cross-correlation."""
    c, h, w = x.shape
    ho = (h - k) // stride + 1
    wo = (w - k) // stride + 1
    s0, s1, s2 = x.strides
    view = np.lib.stride_tricks.as_strided(
        x, shape=(c, k, k, ho, wo),
        strides=(s0, s1, s2, s1 * stride, s2 * stride), writeable=False)
    return view.reshape(c * k * k, ho * wo)


def conv2d(x: Tensor, weight: Tensor, stride: int = 1, padding: int = 0,
           bias: Optional[Tensor] = None) -> Tensor:
    """Cross-correlation of x (Cin, H, W) with weight (Cout, Cin, k, k),
    plus an optional per-output-channel bias.

    The output size (H + 2*padding - k)/stride + 1 must be a positive
    integer exactly; use pad2d for asymmetric schemes.
    """
    from .errors import ConfigurationError

    if len(x.shape) != 3 or len(weight.shape) != 4:
        raise ShapeMismatchError(f"conv2d: input {x.shape}, weight {weight.shape}")
    cout, cin, k, k2 = weight.shape
    if k != k2 or k not in (1, 3):
        raise ConfigurationError(f"conv2d: kernel must be square 1x1 or 3x3, got {k}x{k2}")
    if x.shape[0] != cin:
        raise ShapeMismatchError(
            f"conv2d: input channels {x.shape[0]} do not match weight channels {cin}")
    if bias is not None and bias.shape != (cout,):
        raise ShapeMismatchError(f"conv2d: bias {bias.shape} does not match {cout} output channels")
    h, w = x.shape[1:]
    for name, extent in (("height", h), ("width", w)):
        num = extent + 2 * padding - k
        if num < 0 or num % stride != 0:
            raise ConfigurationError(
                f"conv2d: non-integral output {name}: ({extent} + 2*{padding} - {k})/{stride} + 1")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding))) if padding else x.data
    ho = (h + 2 * padding - k) // stride + 1
    wo = (w + 2 * padding - k) // stride + 1
    cols = _im2col(xp, k, stride)  # kept for the backward matmuls
    wmat = weight.data.reshape(cout, cin * k * k)
    out_mat = wmat @ cols
    if bias is not None:
        out_mat += bias.data[:, None]
    out_data = out_mat.reshape(cout, ho, wo)

    def bwd(g):
        gmat = g.reshape(cout, ho * wo)
        if bias is not None:
            _accum(bias, gmat.sum(axis=1), owned=True)
        _accum(weight, (gmat @ cols.T).reshape(cout, cin, k, k), owned=True)
        # scatter the column gradient back to (padded) input positions:
        # k*k strided slice-adds instead of a full correlation
        dcols = (wmat.T @ gmat).reshape(cin, k, k, ho, wo)
        dxp = np.zeros_like(xp)
        for di in range(k):
            for dj in range(k):
                dxp[:, di:di + stride * ho:stride, dj:dj + stride * wo:stride] += dcols[:, di, dj]
        if padding:
            dxp = np.ascontiguousarray(dxp[:, padding:-padding, padding:-padding])
        _accum(x, dxp, owned=True)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _make(out_data, parents, bwd, "conv2d")


def pad2d(x: Tensor, pads: tuple[int, int, int, int]) -> Tensor:
    """Zero-pad (Cin, H, W) by (top, bottom, left, right)."""
    t, b, l, r = pads
    out_data = np.pad(x.data, ((0, 0), (t, b), (l, r)))

    def bwd(g):
        h, w = x.shape[1:]
        _accum(x, np.ascontiguousarray(g[:, t:t + h, l:l + w]), owned=True)

    return _make(out_data, (x,), bwd, "pad2d")
