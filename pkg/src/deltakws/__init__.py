"""Threshold-driven delta inference for keyword-spotting transformer encoders.

The engine runs a standard encoder stack in a dense reference mode and in a
delta mode that gates six encoding sites with per-site thresholds, counting
executed multiply-accumulates per stage along the way.
"""

from .accounting import (
    MacReport,
    StageId,
    assemble_report,
    dense_stage_macs,
    extreme_case_macs,
    theoretical_max_savings,
)
from .analysis import CorrelationStats, row_delta_tensor, subthreshold_fraction
from .delta import (
    DeltaRowState,
    DeltaSoftmaxState,
    SparseDelta,
    delta_delta_product,
    delta_matmul_row,
    delta_softmax_update,
    encode_row,
    reconstruct_rows,
    sparse_overlap_dot,
)
from .errors import (
    BadMagicError,
    EngineError,
    FormatError,
    NumericError,
    NumericRangeError,
    ShapeError,
    TruncatedPayloadError,
    UnsupportedStageError,
    UnsupportedVersionError,
)
from .io import (
    RunRecord,
    emit_report,
    gen_features,
    gen_weights,
    load_features,
    load_matrix_csv,
    load_weights,
    save_features,
    save_matrix_csv,
    save_weights,
)
from .model import (
    DeltaTrace,
    EncoderWeights,
    LayerWeights,
    ModelConfig,
    ThresholdConfig,
    classify,
    delta_forward,
    dense_forward,
    embed_input,
)
from .tensor import MacCounter, Matrix, add, gelu, layer_norm, matmul, row_softmax

__version__ = "0.1.0"
