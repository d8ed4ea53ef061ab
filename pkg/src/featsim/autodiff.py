"""Reverse-mode automatic differentiation over dense float tensors.

Every op records a vector-Jacobian closure; backward() walks the recorded
graph in reverse topological order and accumulates gradients into Parameter
leaves. Gradients accumulate across backward() calls until zero_grad().

float32 is the working precision; float64 is accepted so the finite
difference verification can run the same graph without quantization noise.
"""

import itertools
from contextlib import contextmanager

import numpy as np

from . import kernels
from .errors import ShapeError

_ALLOWED_DTYPES = (np.float32, np.float64)
_param_ids = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (pure inference)."""
    global _grad_enabled
    saved = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = saved


class Tensor:
    """A dense float array plus an optional place in the autodiff graph."""

    __slots__ = ("data", "requires_grad", "_parents", "_vjp")

    def __init__(self, data, requires_grad=False, parents=(), vjp=None):
        arr = np.ascontiguousarray(data)
        if arr.dtype not in (np.dtype(np.float32), np.dtype(np.float64)):
            arr = arr.astype(np.float32)
        self.data = arr
        self.requires_grad = requires_grad
        self._parents = parents
        self._vjp = vjp

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self):
        return self.data.size

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(())[()])

    def detach(self):
        """Same values, cut loose from the graph."""
        return Tensor(self.data, requires_grad=False)

    def backward(self):
        backward(self)

    def __repr__(self):
        grad = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{grad})"


class Parameter(Tensor):
    """A trainable leaf: value plus a persistent gradient buffer."""

    __slots__ = ("grad", "name", "uid")

    def __init__(self, data, name=None):
        super().__init__(data, requires_grad=True)
        self.grad = np.zeros_like(self.data)
        self.name = name
        self.uid = next(_param_ids)

    def zero_grad(self):
        self.grad[...] = 0

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Parameter(shape={self.shape}{label})"


def backward(loss):
    """Populate .grad on every Parameter the scalar loss depends on."""
    if loss.data.size != 1:
        raise ShapeError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return

    order = _toposort(loss)
    grads = {id(loss): np.ones_like(loss.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if isinstance(node, Parameter):
            node.grad += g
            continue
        if node._vjp is None:
            continue
        for parent, pg in zip(node._parents, node._vjp(g)):
            if pg is None or not parent.requires_grad:
                continue
            pid = id(parent)
            if pid in grads:
                grads[pid] = grads[pid] + pg
            else:
                grads[pid] = pg


def _toposort(root):
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, emit = stack.pop()
        if emit:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in visited:
                stack.append((parent, False))
    return order


def _node(data, parents, vjp):
    if _grad_enabled and any(p.requires_grad for p in parents):
        return Tensor(data, requires_grad=True, parents=tuple(parents), vjp=vjp)
    return Tensor(data)


def _check_same_dtype(*tensors):
    dt = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dt:
            raise ShapeError(f"mixed dtypes in op: {dt} vs {t.data.dtype}")
    return dt


# ---------------------------------------------------------------------------
# ops


def conv2d(x, w, b, padding=1):
    """Stride-1 cross-correlation of x (Cin,H,W) with w (Cout,Cin,k,k) plus bias b (Cout,).

    k must be 1 or 3; padding 1 with k=3 preserves the spatial size.
    """
    _check_same_dtype(x, w, b)
    if x.data.ndim != 3 or w.data.ndim != 4 or b.data.ndim != 1:
        raise ShapeError(
            f"conv2d expects x(C,H,W), w(O,C,k,k), b(O); got {x.shape}, {w.shape}, {b.shape}"
        )
    cout, cin, kh, kw = w.shape
    if kh != kw or kh not in (1, 3):
        raise ShapeError(f"conv2d kernel must be 1x1 or 3x3, got {kh}x{kw}")
    if x.shape[0] != cin:
        raise ShapeError(f"conv2d input has {x.shape[0]} channels, kernel expects {cin}")
    if b.shape != (cout,):
        raise ShapeError(f"conv2d bias shape {b.shape} does not match {cout} output channels")
    if x.shape[1] + 2 * padding < kh or x.shape[2] + 2 * padding < kw:
        raise ShapeError(f"conv2d input {x.shape} too small for kernel {kh} with padding {padding}")

    out = kernels.conv2d_forward(x.data, w.data, b.data, padding)
    xd, wd = x.data, w.data
    need_gx, need_gw, need_gb = x.requires_grad, w.requires_grad, b.requires_grad

    def vjp(g):
        g = np.ascontiguousarray(g)
        gx, gw = kernels.conv2d_backward(g, xd, wd, padding, need_gx, need_gw)
        gb = g.sum(axis=(1, 2)) if need_gb else None
        return gx, gw, gb

    return _node(out, (x, w, b), vjp)


def relu(x):
    out = np.maximum(x.data, 0)
    xd = x.data

    def vjp(g):
        return (g * (xd > 0),)

    return _node(out, (x,), vjp)


def maxpool2x2(x):
    """2x2/stride-2 max pool; spatial dims must be even."""
    if x.data.ndim != 3:
        raise ShapeError(f"maxpool2x2 expects (C,H,W), got {x.shape}")
    c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2x2 needs even spatial dims, got {h}x{w}")
    out, idx = kernels.maxpool2_forward(x.data)

    def vjp(g):
        return (kernels.maxpool2_backward(np.ascontiguousarray(g), idx),)

    return _node(out, (x,), vjp)


def nearest_interpolate(x, target_h, target_w):
    """Nearest-neighbor resize of (C,H,W); output (i,j) copies (i*H//tH, j*W//tW)."""
    if x.data.ndim != 3:
        raise ShapeError(f"nearest_interpolate expects (C,H,W), got {x.shape}")
    if target_h < 1 or target_w < 1:
        raise ShapeError(f"nearest_interpolate target must be >= 1, got {target_h}x{target_w}")
    c, h, w = x.shape
    rows = (np.arange(target_h) * h) // target_h
    cols = (np.arange(target_w) * w) // target_w
    out = x.data[:, rows[:, None], cols[None, :]]
    identity = target_h == h and target_w == w
    integer_zoom = (not identity) and target_h % h == 0 and target_w % w == 0

    def vjp(g):
        if identity:
            return (g,)
        if integer_zoom:
            fh, fw = target_h // h, target_w // w
            return (g.reshape(c, h, fh, w, fw).sum(axis=(2, 4)),)
        gx = np.zeros((c, h, w), dtype=g.dtype)
        np.add.at(gx, (slice(None), rows[:, None], cols[None, :]), g)
        return (gx,)

    return _node(out, (x,), vjp)


def concat_channels(a, b):
    _check_same_dtype(a, b)
    if a.data.ndim != 3 or b.data.ndim != 3 or a.shape[1:] != b.shape[1:]:
        raise ShapeError(f"concat_channels needs matching H,W; got {a.shape} and {b.shape}")
    out = np.concatenate([a.data, b.data], axis=0)
    ca = a.shape[0]

    def vjp(g):
        return np.ascontiguousarray(g[:ca]), np.ascontiguousarray(g[ca:])

    return _node(out, (a, b), vjp)


def channel_softmax(x):
    """Softmax across the channel axis, independently per pixel."""
    if x.data.ndim != 3:
        raise ShapeError(f"channel_softmax expects (K,H,W), got {x.shape}")
    shifted = x.data - x.data.max(axis=0, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=0, keepdims=True)

    def vjp(g):
        return (out * (g - (g * out).sum(axis=0, keepdims=True)),)

    return _node(out, (x,), vjp)


def global_avg_pool(x):
    """(C,H,W) -> (C,): mean over the spatial dims."""
    if x.data.ndim != 3:
        raise ShapeError(f"global_avg_pool expects (C,H,W), got {x.shape}")
    c, h, w = x.shape
    out = x.data.mean(axis=(1, 2))

    def vjp(g):
        gx = np.empty((c, h, w), dtype=g.dtype)
        gx[...] = (g / (h * w))[:, None, None]
        return (gx,)

    return _node(out, (x,), vjp)


def add(a, b):
    _check_same_dtype(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add needs equal shapes, got {a.shape} and {b.shape}")

    def vjp(g):
        return g, g

    return _node(a.data + b.data, (a, b), vjp)


def sub(a, b):
    _check_same_dtype(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"sub needs equal shapes, got {a.shape} and {b.shape}")

    def vjp(g):
        return g, -g

    return _node(a.data - b.data, (a, b), vjp)


def mul(a, b):
    """Elementwise product; shapes must match or differ only in size-1 dims."""
    _check_same_dtype(a, b)
    if a.data.ndim != b.data.ndim or any(
        da != db and 1 not in (da, db) for da, db in zip(a.shape, b.shape)
    ):
        raise ShapeError(f"mul shapes not broadcastable: {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return _node(ad * bd, (a, b), vjp)


def div(a, b):
    """Elementwise quotient of equal-shape tensors."""
    _check_same_dtype(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"div needs equal shapes, got {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def vjp(g):
        return g / bd, -g * ad / (bd * bd)

    return _node(ad / bd, (a, b), vjp)


def _unbroadcast(g, shape):
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and g.shape[i] != 1)
    return g.sum(axis=axes, keepdims=True) if axes else g


def reshape(x, shape):
    out = x.data.reshape(shape)
    orig = x.data.shape

    def vjp(g):
        return (g.reshape(orig),)

    return _node(out, (x,), vjp)


def affine(x, scale, shift=0.0):
    """scale * x + shift with python-float constants."""
    dt = x.data.dtype.type
    out = x.data * dt(scale) + dt(shift)

    def vjp(g):
        return (g * dt(scale),)

    return _node(out, (x,), vjp)


def tensor_sum(x, axis=None):
    """Sum over the given axes (all, when axis is None)."""
    if axis is None:
        axis = tuple(range(x.data.ndim))
    elif isinstance(axis, int):
        axis = (axis,)
    out = x.data.sum(axis=axis)
    shape = x.data.shape

    def vjp(g):
        expanded = np.expand_dims(g, axis) if len(axis) else g
        gx = np.empty(shape, dtype=g.dtype)
        gx[...] = expanded
        return (gx,)

    return _node(out, (x,), vjp)


def mean_all(x):
    return affine(tensor_sum(x), 1.0 / x.data.size)
