"""Dense 2-D kernels with pluggable MAC counting.

Matrices are plain numpy 2-D arrays (row-major, float32 or float64); the
whole engine is built on the handful of operations below. Counting follows
one rule everywhere: a MAC is a scalar multiplication inside a matrix
product. Additions are free; exponentials, divisions and scaling
multiplies go to ``overhead_ops``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import erf

from .errors import NumericError, ShapeError

# Type alias: everything 2-D in this package is a plain ndarray.
Matrix = np.ndarray

_INV_SQRT2 = 1.0 / math.sqrt(2.0)


@dataclass
class MacCounter:
    """Multiply counts for one logical stage.

    executed: scalar multiplications the (possibly sparse) schedule performed.
    dense_equivalent: multiplications the dense schedule would perform on the
        same shapes.
    overhead_ops: exponentials / divisions / scaling multiplies that are not
        part of a matrix product.
    """

    executed: int = 0
    dense_equivalent: int = 0
    overhead_ops: int = 0

    def merge(self, other: "MacCounter") -> None:
        """Fold another counter into this one (field-wise integer sums)."""
        self.executed += other.executed
        self.dense_equivalent += other.dense_equivalent
        self.overhead_ops += other.overhead_ops

    def __add__(self, other: "MacCounter") -> "MacCounter":
        return MacCounter(
            self.executed + other.executed,
            self.dense_equivalent + other.dense_equivalent,
            self.overhead_ops + other.overhead_ops,
        )

    def copy(self) -> "MacCounter":
        return MacCounter(self.executed, self.dense_equivalent, self.overhead_ops)


def require_matrix(m: Matrix, name: str = "matrix") -> None:
    """Reject anything that is not a non-empty 2-D array."""
    if not isinstance(m, np.ndarray) or m.ndim != 2:
        raise ShapeError(f"{name} must be a 2-D array, got {getattr(m, 'shape', type(m))}")
    if m.shape[0] < 1 or m.shape[1] < 1:
        raise ShapeError(f"{name} must be non-empty, got shape {m.shape}")


def check_finite(m: np.ndarray, context: str = "result") -> None:
    if not np.all(np.isfinite(m)):
        raise NumericError(f"{context} contains non-finite values")


def matmul(a: Matrix, b: Matrix, counter: MacCounter | None = None) -> Matrix:
    """Standard matrix product with dense MAC accounting."""
    require_matrix(a, "left operand")
    require_matrix(b, "right operand")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply shapes {a.shape} and {b.shape}")
    with np.errstate(over="ignore", invalid="ignore"):
        out = a @ b
    check_finite(out, "matmul result")
    if counter is not None:
        macs = a.shape[0] * a.shape[1] * b.shape[1]
        counter.executed += macs
        counter.dense_equivalent += macs
    return out


def row_softmax(m: Matrix) -> Matrix:
    """Row-wise softmax with per-row maximum subtraction for stability."""
    require_matrix(m)
    check_finite(m, "softmax input")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def layer_norm(m: Matrix, gamma: Matrix, beta: Matrix, epsilon: float = 1e-6) -> Matrix:
    """Per-row normalization with population variance, then affine gamma/beta."""
    require_matrix(m)
    if epsilon <= 0:
        raise ShapeError(f"epsilon must be positive, got {epsilon}")
    g = np.asarray(gamma).reshape(-1)
    b = np.asarray(beta).reshape(-1)
    if g.shape[0] != m.shape[1] or b.shape[0] != m.shape[1]:
        raise ShapeError(
            f"gamma/beta of widths {g.shape[0]}/{b.shape[0]} do not match {m.shape[1]} columns"
        )
    mean = m.mean(axis=1, keepdims=True)
    var = m.var(axis=1, keepdims=True)
    out = (m - mean) / np.sqrt(var + epsilon) * g + b
    check_finite(out, "layer_norm result")
    return out


def gelu(m: Matrix) -> Matrix:
    """Exact GELU, x * Phi(x), with the Gaussian CDF via erf."""
    require_matrix(m)
    check_finite(m, "gelu input")
    return 0.5 * m * (1.0 + erf(m * _INV_SQRT2))


def add(a: Matrix, b: Matrix) -> Matrix:
    """Element-wise sum of equally shaped matrices."""
    require_matrix(a, "left operand")
    require_matrix(b, "right operand")
    if a.shape != b.shape:
        raise ShapeError(f"cannot add shapes {a.shape} and {b.shape}")
    return a + b
