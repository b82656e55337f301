"""Threshold-gated delta kernels.

Four algorithms live here, all built on the same encoding step: a token row
is replaced by its differences against a frozen reference row, keeping only
entries whose magnitude strictly exceeds a threshold. Retained entries
update the reference; skipped entries leave it frozen, which is where the
approximation (and the compute saving) comes from.

  * encode_row          - produce the sparse delta and advance the reference
  * delta_matmul_row    - sparse-row x dense-matrix with output accumulation
  * delta_delta_product - full product of two delta-encoded operands via a
                          2-D recurrence whose interior cost is the overlap
                          of the two sparse supports
  * delta_softmax_update- incremental softmax row update through per-element
                          exp(delta) numerators and a ratio-of-exp-sums
                          denominator

Every kernel is exact with respect to the *reconstructed reference*
operands: with all thresholds at zero the results match the dense
computation to rounding error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NumericRangeError, ShapeError
from .tensor import MacCounter, Matrix, check_finite, require_matrix


@dataclass
class SparseDelta:
    """Sparse row of retained differences.

    indices are strictly increasing column positions; values are the
    corresponding non-zero differences; dim is the full row width.
    """

    indices: np.ndarray
    values: np.ndarray
    dim: int

    def __post_init__(self) -> None:
        self.indices = np.asarray(self.indices, dtype=np.int64)
        self.values = np.asarray(self.values)
        if self.indices.shape != self.values.shape or self.indices.ndim != 1:
            raise ShapeError(
                f"indices {self.indices.shape} and values {self.values.shape} must be matching 1-D arrays"
            )
        if self.indices.size:
            if self.indices[0] < 0 or self.indices[-1] >= self.dim:
                raise ShapeError(f"indices outside [0, {self.dim})")
            if np.any(np.diff(self.indices) <= 0):
                raise ShapeError("indices must be strictly increasing")
            if np.any(self.values == 0):
                raise ShapeError("zero values are never stored in a delta")

    @property
    def nnz(self) -> int:
        return int(self.indices.size)


@dataclass
class DeltaRowState:
    """Per-site running state: the reference row, plus (optionally) the
    accumulated output row of the matrix product this site feeds."""

    reference: np.ndarray
    accumulated_output: np.ndarray | None = None


@dataclass
class DeltaSoftmaxState:
    """Per-head softmax chain state.

    prev_softmax is the softmax of the current reference logits row;
    exp_sum is the sum of exp over that same reference row, kept so that
    prev_softmax[i] * exp_sum reconstructs exp(reference logit i).
    """

    prev_softmax: np.ndarray
    exp_sum: float


def encode_row(x: np.ndarray, state: DeltaRowState, theta: float) -> SparseDelta:
    """Delta-encode one row against the running reference.

    Entries with |x[i] - reference[i]| strictly above theta are emitted and
    overwrite the reference at those positions; everything else (including
    differences exactly equal to theta) is skipped and the reference stays
    frozen there. Exact zeros are never emitted, so theta=0 passes every
    actual change and nothing else.
    """
    x = np.asarray(x)
    if x.ndim != 1 or x.shape[0] != state.reference.shape[0]:
        raise ShapeError(
            f"row of length {x.shape} does not match reference of length {state.reference.shape}"
        )
    if theta < 0:
        raise ShapeError(f"threshold must be non-negative, got {theta}")
    diff = x - state.reference
    idx = np.flatnonzero(np.abs(diff) > theta)
    state.reference[idx] = x[idx]
    return SparseDelta(indices=idx, values=diff[idx], dim=int(x.shape[0]))


def delta_matmul_row(
    delta: SparseDelta, w: Matrix, state: DeltaRowState, counter: MacCounter
) -> np.ndarray:
    """Accumulate one delta row into the running product row.

    Returns (and stores) accumulated_output + sum_k values[k] * w[indices[k], :].
    Costs nnz * w.cols executed MACs against a dense equivalent of
    w.rows * w.cols.
    """
    require_matrix(w, "weight matrix")
    if delta.dim != w.shape[0]:
        raise ShapeError(f"delta of dim {delta.dim} does not match weight rows {w.shape[0]}")
    if state.accumulated_output is None:
        raise ShapeError("state has no accumulated output row")
    if state.accumulated_output.shape[0] != w.shape[1]:
        raise ShapeError(
            f"accumulated output of width {state.accumulated_output.shape[0]} "
            f"does not match weight cols {w.shape[1]}"
        )
    if delta.nnz:
        out = state.accumulated_output + delta.values @ w[delta.indices, :]
    else:
        out = state.accumulated_output.copy()
    counter.executed += delta.nnz * w.shape[1]
    counter.dense_equivalent += w.shape[0] * w.shape[1]
    state.accumulated_output = out
    return out


def reconstruct_rows(anchor_rows: Matrix, deltas: list[SparseDelta] | tuple) -> Matrix:
    """Rebuild the full reference matrix from dense anchor rows plus the
    chained deltas (row t = row t-1 with its delta applied)."""
    require_matrix(anchor_rows, "anchor rows")
    na = anchor_rows.shape[0]
    out = np.empty((na + len(deltas), anchor_rows.shape[1]), dtype=anchor_rows.dtype)
    out[:na] = anchor_rows
    for i, d in enumerate(deltas):
        if d.dim != anchor_rows.shape[1]:
            raise ShapeError(f"delta dim {d.dim} does not match row width {anchor_rows.shape[1]}")
        row = out[na + i - 1].copy()
        row[d.indices] += d.values
        out[na + i] = row
    return out


def delta_delta_product(
    a_anchor_rows: Matrix,
    a_deltas: list[SparseDelta] | tuple,
    b_anchor_cols: Matrix,
    b_deltas: list[SparseDelta] | tuple,
    counter: MacCounter,
) -> Matrix:
    """Product of two delta-encoded operands via the 2-D recurrence.

    A is described by two dense anchor rows plus row deltas; B by two dense
    anchor columns plus column deltas. The result equals the dense product
    of the reconstructed reference matrices A_hat @ B_hat. Schedule and
    executed-MAC cost:

      * the 2x2 anchor block is computed densely (inner MACs per cell),
      * the first two rows extend rightward, r[i,j] = r[i,j-1] + A_i . dB_j
        (nnz(dB_j) MACs per cell),
      * the first two columns extend downward, r[i,j] = r[i-1,j] + dA_i . B_j
        (nnz(dA_i) MACs per cell),
      * interior cells follow
        r[i,j] = r[i-1,j] + r[i,j-1] - r[i-1,j-1] + dA_i . dB_j,
        whose delta term costs only the overlap of the two sparse supports.

    With fewer than two anchor rows or columns the product falls back to a
    fully dense evaluation of the reconstructed operands.
    """
    require_matrix(a_anchor_rows, "A anchor rows")
    require_matrix(b_anchor_cols, "B anchor columns")
    inner = a_anchor_rows.shape[1]
    if b_anchor_cols.shape[0] != inner:
        raise ShapeError(
            f"inner dimensions differ: A anchors {a_anchor_rows.shape}, B anchors {b_anchor_cols.shape}"
        )
    if a_anchor_rows.shape[0] > 2 or b_anchor_cols.shape[1] > 2:
        raise ShapeError("at most two anchor rows/columns are supported")
    for d in a_deltas:
        if d.dim != inner:
            raise ShapeError(f"A delta dim {d.dim} does not match inner dim {inner}")
    for d in b_deltas:
        if d.dim != inner:
            raise ShapeError(f"B delta dim {d.dim} does not match inner dim {inner}")

    ra = a_anchor_rows.shape[0]
    rb = b_anchor_cols.shape[1]
    m = ra + len(a_deltas)
    n = rb + len(b_deltas)
    dtype = np.result_type(a_anchor_rows.dtype, b_anchor_cols.dtype)

    a_hat = reconstruct_rows(a_anchor_rows, a_deltas)
    b_hat = reconstruct_rows(b_anchor_cols.T, b_deltas).T

    counter.dense_equivalent += m * n * inner

    if ra < 2 or rb < 2:
        # Degenerate operand: no anchors to hang the recurrence on.
        out = a_hat @ b_hat
        counter.executed += m * n * inner
        check_finite(out, "delta_delta_product result")
        return out

    r = np.empty((m, n), dtype=dtype)

    # Dense 2x2 anchor block.
    r[:2, :2] = a_hat[:2] @ b_hat[:, :2]
    counter.executed += 4 * inner

    # First two rows, extended rightward.
    if n > 2:
        contrib = np.zeros((2, n - 2), dtype=dtype)
        for j, d in enumerate(b_deltas):
            if d.nnz:
                contrib[:, j] = a_hat[:2, d.indices] @ d.values
                counter.executed += 2 * d.nnz
        r[:2, 2:] = r[:2, 1:2] + np.cumsum(contrib, axis=1)

    # First two columns, extended downward.
    if m > 2:
        contrib = np.zeros((m - 2, 2), dtype=dtype)
        for i, d in enumerate(a_deltas):
            if d.nnz:
                contrib[i] = d.values @ b_hat[d.indices, :2]
                counter.executed += 2 * d.nnz
        r[2:, :2] = r[1:2, :2] + np.cumsum(contrib, axis=0)

    # Interior: delta-delta terms, then the inclusion-exclusion recurrence
    # swept row by row (the row sweep accumulates left to right, matching
    # the per-cell schedule up to rounding).
    if m > 2 and n > 2:
        da = np.zeros((m - 2, inner), dtype=dtype)
        for i, d in enumerate(a_deltas):
            da[i, d.indices] = d.values
        db = np.zeros((inner, n - 2), dtype=dtype)
        for j, d in enumerate(b_deltas):
            db[d.indices, j] = d.values
        dd = da @ db
        overlap = (da != 0).astype(np.int64) @ (db != 0).astype(np.int64)
        counter.executed += int(overlap.sum())
        for i in range(2, m):
            row_diff = (r[i, 1] - r[i - 1, 1]) + np.cumsum(dd[i - 2])
            r[i, 2:] = r[i - 1, 2:] + row_diff

    check_finite(r, "delta_delta_product result")
    return r


def delta_softmax_update(
    state: DeltaSoftmaxState, delta_logits: SparseDelta, counter: MacCounter
) -> np.ndarray:
    """Advance one softmax row from the previous row and sparse logit deltas.

    With NOM_i = exp(delta_i) at retained positions (1 elsewhere) and
    DENOM = sum_i exp(ref_i + delta_i) / sum_i exp(ref_i), the new row is
    prev_softmax * NOM / DENOM. The new exponential sum is accumulated
    sparsely, exp_sum + sum_retained prev[i] * exp_sum * (exp(delta_i) - 1),
    so cost scales with nnz plus one full-row scaling pass. No matmul MACs
    are executed; exponentials, divisions and scaling multiplies land in
    overhead_ops.

    Raises NumericRangeError when a delta overflows exp() or the updated
    exponential sum degenerates; the caller should recompute the row densely
    and reset the chain.
    """
    prev = state.prev_softmax
    if delta_logits.dim != prev.shape[0]:
        raise ShapeError(
            f"delta of dim {delta_logits.dim} does not match softmax row of length {prev.shape[0]}"
        )
    if delta_logits.nnz == 0:
        return prev.copy()

    idx = delta_logits.indices
    with np.errstate(over="ignore"):
        nom = np.exp(delta_logits.values)
    if not np.all(np.isfinite(nom)):
        raise NumericRangeError(
            "logit delta overflows exp(); recompute this row with a dense softmax"
        )
    exp_ref = prev[idx] * state.exp_sum
    new_exp_sum = state.exp_sum + float((exp_ref * (nom - 1.0)).sum())
    if not np.isfinite(new_exp_sum) or new_exp_sum <= 0.0:
        raise NumericRangeError(
            "updated exponential sum left the representable range; "
            "recompute this row with a dense softmax"
        )
    denom = new_exp_sum / state.exp_sum
    scale = 1.0 / denom
    new_row = prev * scale
    new_row[idx] = prev[idx] * nom * scale

    nnz = delta_logits.nnz
    counter.overhead_ops += nnz  # exponentials
    counter.overhead_ops += 2  # denominator ratio + reciprocal
    counter.overhead_ops += prev.shape[0] + 3 * nnz  # scaling multiplies

    state.prev_softmax = new_row
    state.exp_sum = new_exp_sum
    return new_row


def sparse_overlap_dot(a: SparseDelta, b: SparseDelta) -> float:
    """Dot product restricted to the shared support of two sparse deltas."""
    if a.dim != b.dim:
        raise ShapeError(f"deltas of dim {a.dim} and {b.dim} are incompatible")
    if a.nnz == 0 or b.nnz == 0:
        return 0.0
    _, ia, ib = np.intersect1d(a.indices, b.indices, assume_unique=True, return_indices=True)
    if ia.size == 0:
        return 0.0
    return float(a.values[ia] @ b.values[ib])
