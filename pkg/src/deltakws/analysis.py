"""Token-correlation statistics: row deltas and sub-threshold fractions.

These quantify how much consecutive token rows actually change, relative to
the tensor's dynamic range. They drive the redundancy inspection dumps and
explain where the delta thresholds get their savings from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ShapeError
from .tensor import Matrix, require_matrix

_HIST_BINS = 32


@dataclass
class CorrelationStats:
    dynamic_range: float
    below_fraction: float
    histogram: np.ndarray
    bin_edges: np.ndarray


def row_delta_tensor(m: Matrix, skip_rows: int = 1) -> Matrix:
    """Differences between consecutive rows, skipping leading rows.

    Output row t is m[skip_rows + t + 1] - m[skip_rows + t]. The default
    skip of one leaves the class-embedding row out of the statistics.
    """
    require_matrix(m)
    if skip_rows < 0:
        raise ShapeError(f"skip_rows must be non-negative, got {skip_rows}")
    if m.shape[0] < skip_rows + 2:
        raise ShapeError(
            f"need at least {skip_rows + 2} rows for deltas with skip_rows={skip_rows}, got {m.shape[0]}"
        )
    tail = m[skip_rows:]
    return tail[1:] - tail[:-1]


def subthreshold_fraction(m: Matrix, pct_of_range: float, skip_rows: int = 1) -> CorrelationStats:
    """Fraction of consecutive-row differences at or below a percentage of
    the whole tensor's dynamic range.

    A zero dynamic range means every delta is zero, so the fraction is 1 by
    convention. The comparison is inclusive, which makes pct 0 report the
    fraction of exactly-zero deltas.
    """
    if pct_of_range < 0:
        raise ShapeError(f"pct_of_range must be non-negative, got {pct_of_range}")
    rng = float(m.max() - m.min())
    deltas = np.abs(row_delta_tensor(m, skip_rows=skip_rows))
    hist_top = float(deltas.max()) if deltas.size and deltas.max() > 0 else 1.0
    hist, edges = np.histogram(deltas, bins=_HIST_BINS, range=(0.0, hist_top))
    if rng == 0.0:
        return CorrelationStats(0.0, 1.0, hist, edges)
    threshold = pct_of_range / 100.0 * rng
    below = float(np.count_nonzero(deltas <= threshold)) / deltas.size
    return CorrelationStats(rng, below, hist, edges)
