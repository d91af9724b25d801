"""Pure-numpy conv2d kernels (im2col + GEMM). Fallback backend."""

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _out_size(h, k, stride, pad):
    return (h + 2 * pad - k) // stride + 1


def _im2col(x, kh, kw, stride, pad):
    n, c, h, w = x.shape
    ho = _out_size(h, kh, stride, pad)
    wo = _out_size(w, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x
    sn, sc, sh, sw = xp.strides
    cols = as_strided(
        xp,
        shape=(n, c, kh, kw, ho, wo),
        strides=(sn, sc, sh, sw, sh * stride, sw * stride),
        writeable=False,
    )
    return np.ascontiguousarray(cols).reshape(n, c * kh * kw, ho * wo), ho, wo


def conv2d_forward(x, w, stride, pad):
    """x: (N,C,H,W), w: (F,C,kh,kw) -> (N,F,Ho,Wo)."""
    return conv2d_forward_ctx(x, w, stride, pad)[0]


def conv2d_forward_ctx(x, w, stride, pad):
    """Forward pass returning (out, ctx); ctx carries the im2col matrix so the
    weight-gradient pass can skip recomputing it."""
    n = x.shape[0]
    f, c, kh, kw = w.shape
    cols, ho, wo = _im2col(x, kh, kw, stride, pad)
    out = np.matmul(w.reshape(f, c * kh * kw), cols)
    return out.reshape(n, f, ho, wo), cols


def conv2d_backward_w(x, w_shape, gout, stride, pad, ctx=None):
    f, c, kh, kw = w_shape
    n = x.shape[0]
    if ctx is None:
        cols, ho, wo = _im2col(x, kh, kw, stride, pad)
    else:
        cols = ctx
        ho, wo = gout.shape[2], gout.shape[3]
    g = gout.reshape(n, f, ho * wo)
    dw = np.matmul(g, cols.transpose(0, 2, 1)).sum(axis=0)
    return dw.reshape(f, c, kh, kw)


def conv2d_backward_x(x_shape, w, gout, stride, pad):
    n, c, h, w_in = x_shape
    f, _, kh, kw = w.shape
    if stride == 1 and gout.shape[2:] == (h, w_in) and 2 * pad == kh - 1 == kw - 1:
        # full-overlap case: input gradient is a conv with the rotated kernel
        w_rot = w[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
        return conv2d_forward(gout, np.ascontiguousarray(w_rot), 1, pad)
    ho, wo = gout.shape[2], gout.shape[3]
    g = gout.reshape(n, f, ho * wo)
    dcols = np.matmul(w.reshape(f, c * kh * kw).T, g)  # (N, C*kh*kw, Ho*Wo)
    dcols = dcols.reshape(n, c, kh, kw, ho, wo)
    dxp = np.zeros((n, c, h + 2 * pad, w_in + 2 * pad), dtype=gout.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += dcols[:, :, i, j]
    if pad:
        return dxp[:, :, pad:-pad, pad:-pad]
    return dxp
