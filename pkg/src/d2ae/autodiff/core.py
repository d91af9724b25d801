"""Tape-based reverse-mode differentiation with gradient gating.

Two orthogonal blocking tools are exposed:

* ``stop_gradient`` cuts a graph edge (forward identity, zero backward), and
* ``backward(graph, loss, groups=...)`` filters which parameter groups may
  accumulate gradient for a given loss term.

Execution is single-threaded per graph; the backward sweep visits the tape
in exact reverse forward order, so results are bit-stable across runs.
"""

from __future__ import annotations

import enum
import weakref
from typing import Callable, Iterable, Optional, Sequence

import numpy as np


class AutodiffError(Exception):
    pass


class ShapeError(AutodiffError):
    pass


class NonFiniteError(AutodiffError):
    """Raised when a primitive produces NaN/Inf (an error state)."""


class Group(enum.Enum):
    ENC = "ENC"
    BRANCH_T = "BRANCH_T"
    BRANCH_P = "BRANCH_P"
    CLS_T = "CLS_T"
    CLS_P = "CLS_P"
    DEC = "DEC"


ALL_GROUPS = frozenset(Group)

# NaN/Inf guard on every primitive output; tests may disable for speed probes.
CHECK_FINITE = True

_GRAPH_STACK: list["Graph"] = []


class Graph:
    """Ordered record of primitive applications (the tape).

    Forward execution order is the topological order; backward replays it
    reversed. Use as a context manager around the forward pass.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __enter__(self) -> "Graph":
        _GRAPH_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _GRAPH_STACK.pop()

    def _record(self, t: "Tensor") -> None:
        t._idx = len(self.nodes)
        # weakref: a strong back-pointer would make every recorded tensor
        # part of a reference cycle with the tape, leaving teardown to the
        # cyclic collector while each cycle pins large arrays (training then
        # accumulates gigabytes between collections)
        t._graph = weakref.ref(self)
        self.nodes.append(t)


def active_graph() -> Optional[Graph]:
    return _GRAPH_STACK[-1] if _GRAPH_STACK else None


class Tensor:
    """Dense n-d real array plus the tape hooks needed for backward."""

    __slots__ = ("data", "_parents", "_vjps", "_idx", "_graph")

    def __init__(self, data, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        self.data = arr
        self._parents: tuple = ()
        self._vjps: tuple = ()
        self._idx: Optional[int] = None
        self._graph: Optional[weakref.ref] = None  # weak ref to the tape

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype})"


class Parameter(Tensor):
    """Learnable tensor tied to one routing group; group is fixed at creation."""

    __slots__ = ("grad", "group", "name")

    def __init__(self, data, group: Group, name: str = "", dtype=None):
        super().__init__(data, dtype=dtype)
        self.grad = np.zeros_like(self.data)
        self.group = group
        self.name = name

    def zero_grad(self) -> None:
        self.grad[...] = 0.0

    def __repr__(self):
        return f"Parameter({self.name!r}, {self.group.value}, shape={self.data.shape})"


def _tracked(t) -> bool:
    return isinstance(t, Parameter) or t._idx is not None


def make_node(op: str, data: np.ndarray,
              parents: Sequence[Tensor],
              vjps: Sequence[Optional[Callable[[np.ndarray], np.ndarray]]]) -> Tensor:
    """Create an op output, recording it on the active graph if any parent
    participates in differentiation."""
    if CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op}: non-finite values in output")
    out = Tensor.__new__(Tensor)
    out.data = data
    out._idx = None
    out._graph = None
    g = active_graph()
    if g is not None and any(_tracked(p) for p in parents):
        kept = [(p, v) for p, v in zip(parents, vjps) if v is not None and _tracked(p)]
        out._parents = tuple(p for p, _ in kept)
        out._vjps = tuple(v for _, v in kept)
        g._record(out)
    else:
        out._parents = ()
        out._vjps = ()
    return out


def backward(graph: Graph, loss: Tensor,
             groups: Optional[Iterable[Group]] = None,
             scale: float = 1.0) -> None:
    """Accumulate d(scale*loss)/dθ into ``Parameter.grad`` for parameters whose
    group is in ``groups`` (all groups when None). Repeated calls accumulate.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._graph is None or loss._graph() is not graph or loss._idx is None:
        raise AutodiffError("backward: loss was not recorded on this graph")
    allowed = ALL_GROUPS if groups is None else frozenset(groups)

    grads: dict[int, np.ndarray] = {
        loss._idx: np.full_like(loss.data, scale)
    }
    for idx in range(loss._idx, -1, -1):
        g = grads.pop(idx, None)
        if g is None:
            continue
        node = graph.nodes[idx]
        for parent, vjp in zip(node._parents, node._vjps):
            pg = vjp(g)
            if isinstance(parent, Parameter):
                if parent.group in allowed:
                    parent.grad += pg.astype(parent.data.dtype, copy=False)
            elif parent._idx is not None and parent._graph is not None \
                    and parent._graph() is graph:
                acc = grads.get(parent._idx)
                if acc is None:
                    grads[parent._idx] = pg.astype(parent.data.dtype, copy=False).copy()
                else:
                    acc += pg
