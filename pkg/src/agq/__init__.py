"""Activation-guided low-bit quantization toolkit.

Uniform and log2 quantizers, per-channel power-of-two refinement with weight
folding, attention-importance token pruning, a bit-exact packed INT4 lane
GEMM, and a toy causal decoder block that ties them together.
"""

from .kernels import (
    AccumulatorBudgetError,
    Int4GemmParams,
    LaneAccumulator,
    PackedInt4Matrix,
    bench_gemm,
    gemm_f32,
    gemm_int4_packed,
    gemm_int4_raw,
    gemm_int_affine,
    gemm_log2_attnv,
    lane_accumulate,
    lane_multiply,
    pack_int4,
    pack_weights_for_gemm,
    unpack_int4,
)
from .pipeline import (
    POST_ATTENTION_SITES,
    SITES,
    Block,
    BlockConfig,
    OutlierReport,
    PipelineError,
    SiteConfig,
    analyze_outliers,
    attention_locality,
    cosine_similarity,
    forward_block,
    forward_fp,
    forward_quant,
    forward_stack,
    init_block,
    init_stack,
    make_outlier_input,
    make_stripe_input,
    preset_sites,
)
from .pruning import (
    AttentionMap,
    PruneSchedule,
    TokenImportance,
    default_start_layer,
    make_schedule,
    prune_step,
    score_tokens,
    sparsity,
)
from .quantizers import (
    AffineParams,
    ChannelSymmetricParams,
    CodeRange,
    Log2Params,
    QuantError,
    QuantTensor,
    dequantize_affine,
    dequantize_log2,
    dequantize_weight_symmetric,
    fit_affine,
    fit_weight_symmetric,
    quantize_affine,
    quantize_log2,
    quantize_weight_symmetric,
)
from .tensor_store import load_store, save_store, slice_rows
from .trip import TripParams, dequantize_trip, fit_trip, fold_trip_into_weights, quantize_trip

__version__ = "0.1.0"
