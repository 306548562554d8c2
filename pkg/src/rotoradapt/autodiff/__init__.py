"""Tape-based reverse-mode autodiff over dense float64 arrays."""

from . import ops
from .adam import AdamState, adam_step
from .backends import backend_name
from .ops import OPS
from .tape import (
    AutodiffError,
    NonFiniteError,
    Tape,
    UnsupportedPrimitiveError,
    Var,
    as_tensor,
    gradient,
    record,
    replay,
)

__all__ = [
    "AdamState",
    "AutodiffError",
    "NonFiniteError",
    "OPS",
    "Tape",
    "UnsupportedPrimitiveError",
    "Var",
    "adam_step",
    "as_tensor",
    "backend_name",
    "gradient",
    "ops",
    "record",
    "replay",
]
