"""Differentiable primitives.

Each primitive validates shapes, computes the forward value with numpy (conv
dispatches to the kernels backend), and registers vector-Jacobian products on
the active graph.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .. import kernels
from .core import ShapeError, Tensor, make_node


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcasted gradient back down to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def matmul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")
    ad, bd = a.data, b.data
    return make_node("matmul", ad @ bd, (a, b),
                     (lambda g: g @ bd.T, lambda g: ad.T @ g))


def add(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    try:
        out = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: cannot broadcast {a.shape} + {b.shape}")
    return make_node("add", out, (a, b),
                     (lambda g: _unbroadcast(g, a.shape),
                      lambda g: _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    try:
        out = a.data - b.data
    except ValueError:
        raise ShapeError(f"sub: cannot broadcast {a.shape} - {b.shape}")
    return make_node("sub", out, (a, b),
                     (lambda g: _unbroadcast(g, a.shape),
                      lambda g: -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = _t(a), _t(b)
    try:
        out = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: cannot broadcast {a.shape} * {b.shape}")
    ad, bd = a.data, b.data
    return make_node("mul", out, (a, b),
                     (lambda g: _unbroadcast(g * bd, a.shape),
                      lambda g: _unbroadcast(g * ad, b.shape)))


def scale(a, c: float) -> Tensor:
    a = _t(a)
    c = float(c)
    return make_node("scale", a.data * c, (a,), (lambda g: g * c,))


def relu(a) -> Tensor:
    a = _t(a)
    mask = a.data > 0
    return make_node("relu", np.where(mask, a.data, 0), (a,),
                     (lambda g: g * mask,))


def sigmoid(a) -> Tensor:
    a = _t(a)
    s = 1.0 / (1.0 + np.exp(-a.data))
    return make_node("sigmoid", s, (a,), (lambda g: g * s * (1.0 - s),))


def log(a) -> Tensor:
    a = _t(a)
    ad = a.data
    return make_node("log", np.log(ad), (a,), (lambda g: g / ad,))


def exp(a) -> Tensor:
    a = _t(a)
    e = np.exp(a.data)
    return make_node("exp", e, (a,), (lambda g: g * e,))


def clip_min(a, lo: float) -> Tensor:
    """max(a, lo); gradient passes only where a > lo."""
    a = _t(a)
    mask = a.data > lo
    return make_node("clip_min", np.where(mask, a.data, lo), (a,),
                     (lambda g: g * mask,))


def softmax(a) -> Tensor:
    """Softmax over the last axis."""
    a = _t(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def vjp(g):
        return y * (g - (g * y).sum(axis=-1, keepdims=True))

    return make_node("softmax", y, (a,), (vjp,))


def log_softmax(a) -> Tensor:
    """log(softmax) over the last axis, fused for stability: the value never
    hits -inf for finite inputs and the gradient (g - softmax * sum g) stays
    informative however saturated the prediction is, unlike log(clip(softmax))
    whose clamp cuts the gradient to zero exactly when recovery is needed."""
    a = _t(a)
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    ls = z - lse
    y = np.exp(ls)

    def vjp(g):
        return g - y * g.sum(axis=-1, keepdims=True)

    return make_node("log_softmax", ls, (a,), (vjp,))


def sum_(a, axis: Optional[int] = None) -> Tensor:
    a = _t(a)
    shape = a.shape

    if axis is None:
        return make_node("sum", np.asarray(a.data.sum()), (a,),
                         (lambda g: np.broadcast_to(g, shape).astype(g.dtype),))

    def vjp(g):
        return np.broadcast_to(np.expand_dims(g, axis), shape).astype(g.dtype)

    return make_node("sum", a.data.sum(axis=axis), (a,), (vjp,))


def mean(a, axis: Optional[int] = None) -> Tensor:
    a = _t(a)
    n = a.data.size if axis is None else a.shape[axis]
    return scale(sum_(a, axis=axis), 1.0 / n)


def sq_diff(a, b) -> Tensor:
    """Sum of squared differences, reduced to a scalar."""
    a, b = _t(a), _t(b)
    if a.shape != b.shape:
        raise ShapeError(f"sq_diff: shape mismatch {a.shape} vs {b.shape}")
    d = a.data - b.data
    return make_node("sq_diff", np.asarray((d * d).sum()), (a, b),
                     (lambda g: 2.0 * g * d, lambda g: -2.0 * g * d))


def reshape(a, shape) -> Tensor:
    a = _t(a)
    old = a.shape
    return make_node("reshape", a.data.reshape(shape), (a,),
                     (lambda g: g.reshape(old),))


def transpose(a) -> Tensor:
    a = _t(a)
    if a.data.ndim != 2:
        raise ShapeError(f"transpose: expected 2-d input, got {a.shape}")
    return make_node("transpose", a.data.T.copy(), (a,), (lambda g: g.T,))


def concat(a, b, axis: int = 1) -> Tensor:
    a, b = _t(a), _t(b)
    na = a.shape[axis]

    def vjp_a(g):
        sl = [slice(None)] * g.ndim
        sl[axis] = slice(0, na)
        return g[tuple(sl)]

    def vjp_b(g):
        sl = [slice(None)] * g.ndim
        sl[axis] = slice(na, None)
        return g[tuple(sl)]

    return make_node("concat", np.concatenate([a.data, b.data], axis=axis),
                     (a, b), (vjp_a, vjp_b))


def conv2d(x, w, stride: int = 1) -> Tensor:
    """2-D convolution, 'same' zero padding (pad = k//2), stride 1 or 2.

    x: (N, C, H, W); w: (F, C, kh, kw) -> (N, F, Ho, Wo).
    """
    x, w = _t(x), _t(w)
    if x.data.ndim != 4 or w.data.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: incompatible shapes x={x.shape} w={w.shape}")
    if stride not in (1, 2):
        raise ShapeError(f"conv2d: unsupported stride {stride}")
    pad = w.shape[2] // 2
    xd, wd = x.data, w.data
    out, ctx = kernels.conv2d_forward_ctx(xd, wd, stride, pad)

    def vjp_x(g):
        return kernels.conv2d_backward_x(xd.shape, wd, g, stride, pad)

    def vjp_w(g):
        return kernels.conv2d_backward_w(xd, wd.shape, g, stride, pad, ctx)

    return make_node("conv2d", out, (x, w), (vjp_x, vjp_w))


def bias_add(x, b) -> Tensor:
    """Add a per-channel bias to a (N, C, H, W) map or a (N, D) matrix."""
    x, b = _t(x), _t(b)
    if x.data.ndim == 4:
        if b.shape != (x.shape[1],):
            raise ShapeError(f"bias_add: bias {b.shape} vs channels {x.shape[1]}")
        out = x.data + b.data[None, :, None, None]
        return make_node("bias_add", out, (x, b),
                         (lambda g: g, lambda g: g.sum(axis=(0, 2, 3))))
    if x.data.ndim == 2:
        if b.shape != (x.shape[1],):
            raise ShapeError(f"bias_add: bias {b.shape} vs width {x.shape[1]}")
        return make_node("bias_add", x.data + b.data[None, :], (x, b),
                         (lambda g: g, lambda g: g.sum(axis=0)))
    raise ShapeError(f"bias_add: unsupported input ndim {x.data.ndim}")


def upsample2x(x) -> Tensor:
    """Nearest-neighbor 2x upsample of (N, C, H, W)."""
    x = _t(x)
    if x.data.ndim != 4:
        raise ShapeError(f"upsample2x: expected 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.repeat(2, axis=2).repeat(2, axis=3)

    def vjp(g):
        return g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))

    return make_node("upsample2x", out, (x,), (vjp,))


def global_avg_pool(x) -> Tensor:
    """(N, C, H, W) -> (N, C) spatial mean."""
    x = _t(x)
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool: expected 4-d input, got {x.shape}")
    n, c, h, w = x.shape
    out = x.data.mean(axis=(2, 3))

    def vjp(g):
        return np.broadcast_to(g[:, :, None, None] / (h * w), (n, c, h, w)).astype(g.dtype)

    return make_node("global_avg_pool", out, (x,), (vjp,))


def stop_gradient(t) -> Tensor:
    """Forward identity; contributes exactly zero gradient to its producers.

    The output is still recorded on the tape (with no backward edges) so a
    loss whose every path is gated stays a valid, zero-gradient backward
    target instead of an unrecorded constant."""
    t = _t(t)
    return make_node("stop_gradient", t.data, (t,), (None,))


def primitive_set() -> dict:
    """Catalog of the differentiable primitives."""
    return {
        "matmul": matmul, "add": add, "sub": sub, "mul": mul, "scale": scale,
        "relu": relu, "sigmoid": sigmoid, "log": log, "exp": exp,
        "clip_min": clip_min, "softmax": softmax, "log_softmax": log_softmax,
        "sum": sum_, "mean": mean,
        "sq_diff": sq_diff, "reshape": reshape, "transpose": transpose,
        "concat": concat,
        "conv2d": conv2d, "bias_add": bias_add, "upsample2x": upsample2x,
        "global_avg_pool": global_avg_pool, "stop_gradient": stop_gradient,
    }
