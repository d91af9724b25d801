"""Finite-difference verification harness (run models in 64-bit mode)."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .core import Graph, Parameter, Tensor, backward


def _rel_err(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def grad_check(f: Callable[[], Tensor], params: Sequence[Parameter],
               eps: float = 1e-4, max_elems_per_param: int | None = None,
               rng: np.random.Generator | None = None) -> float:
    """Max relative error between analytic gradients of ``f`` and central
    finite differences, over all (or a sampled subset of) parameter elements.

    ``f`` must rebuild its graph on every call and read the current parameter
    values. Parameters should be float64 for meaningful tolerances.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    for p in params:
        p.zero_grad()
    with Graph() as g:
        loss = f()
    backward(g, loss)
    analytic = {id(p): p.grad.copy() for p in params}

    worst = 0.0
    for p in params:
        flat = p.data.reshape(-1)
        idxs = range(flat.size)
        if max_elems_per_param is not None and flat.size > max_elems_per_param:
            r = rng or np.random.default_rng(0)
            idxs = sorted(r.choice(flat.size, size=max_elems_per_param, replace=False))
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            with Graph():
                hi = float(f().data)
            flat[i] = orig - eps
            with Graph():
                lo = float(f().data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * eps)
            worst = max(worst, _rel_err(float(analytic[id(p)].reshape(-1)[i]), numeric))
    return worst
