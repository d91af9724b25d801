"""Conv2d kernel backend selection.

Two interchangeable backends exist: a compiled Cython extension (`_conv_cy`,
direct loops) and a numpy im2col+GEMM implementation. On this problem size the
GEMM path wins by an order of magnitude (see benchmarks/bench_kernels.py), so
``auto`` resolves to it. Override with ``D2AE_KERNELS=python`` or
``D2AE_KERNELS=cython``.
"""

import os

from . import conv_py

_choice = os.environ.get("D2AE_KERNELS", "auto").lower()

if _choice == "cython":
    import numpy as _np

    from . import _conv_cy as _cy

    BACKEND = "cython"

    def conv2d_forward(x, w, stride, pad):
        return _cy.conv2d_forward(_np.ascontiguousarray(x),
                                  _np.ascontiguousarray(w), stride, pad)

    def conv2d_forward_ctx(x, w, stride, pad):
        return conv2d_forward(x, w, stride, pad), None

    def conv2d_backward_w(x, w_shape, gout, stride, pad, ctx=None):
        return _cy.conv2d_backward_w(_np.ascontiguousarray(x), tuple(w_shape),
                                     _np.ascontiguousarray(gout), stride, pad)

    def conv2d_backward_x(x_shape, w, gout, stride, pad):
        return _cy.conv2d_backward_x(tuple(x_shape), _np.ascontiguousarray(w),
                                     _np.ascontiguousarray(gout), stride, pad)
else:
    BACKEND = "python"
    conv2d_forward = conv_py.conv2d_forward
    conv2d_forward_ctx = conv_py.conv2d_forward_ctx
    conv2d_backward_w = conv_py.conv2d_backward_w
    conv2d_backward_x = conv_py.conv2d_backward_x
