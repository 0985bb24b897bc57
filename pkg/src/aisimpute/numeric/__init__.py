"""Dense-array math with reverse-mode gradients, plus seeded random streams."""

from . import tensor as ops
from .gradcheck import GradCheckResult, NonFiniteError, grad_check, relative_error
from .rng import RngStream, rng_stream
from .tensor import ShapeError, Tape, Tensor, as_tensor, make_node, merge_grads

__all__ = [
    "GradCheckResult",
    "NonFiniteError",
    "RngStream",
    "ShapeError",
    "Tape",
    "Tensor",
    "as_tensor",
    "grad_check",
    "make_node",
    "merge_grads",
    "ops",
    "relative_error",
    "rng_stream",
]
