from .core import (
    ALL_GROUPS,
    AutodiffError,
    Graph,
    Group,
    NonFiniteError,
    Parameter,
    ShapeError,
    Tensor,
    backward,
)
from .check import grad_check
from . import ops

__all__ = [
    "ALL_GROUPS", "AutodiffError", "Graph", "Group", "NonFiniteError",
    "Parameter", "ShapeError", "Tensor", "backward", "grad_check", "ops",
]
