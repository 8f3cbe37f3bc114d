"""ternsim: bit-exact functional model and cycle/traffic simulator for a
dual-core ternary/INT8 transformer accelerator."""

from .arith import (
    MODE_INT8,
    MODE_TERNARY,
    BoothRecoding,
    TernaryCodeError,
    TernaryTensor,
    booth_multiply,
    booth_recode,
    booth_recode_ternary,
    load_ternary,
    pack_ternary,
    save_ternary,
    sel,
    unpack_ternary,
)
from .boothflex import BoothFlexCoreModel, SchedulingError, booth_matmul
from .lop import (
    LopFeature,
    LopFeatures,
    TopKSelection,
    extract_features,
    lop_gate,
    select_top_k,
    surrogate_score,
    surrogate_scores,
)
from .memsys import (
    BufferPorts,
    CreditAccountingError,
    CreditPool,
    FetchResult,
    KvCache,
    TrafficStats,
)
from .model import (
    LayerConfig,
    LayerWeights,
    float_oracle_layer,
    generate_weights,
    load_layer_weights,
    save_layer_weights,
    ternary_quantize_weights,
)
from .quant import (
    QuantVector,
    ReductionState,
    absmax_quantize,
    requantize_accumulators,
    round_half_away_from_zero,
    streaming_rms_norm,
    streaming_softmax,
)
from .sched import (
    DecodeStepResult,
    PrefillResult,
    ScheduleTrace,
    SimConfig,
    Simulation,
    SimulationInvariantError,
    StepInfo,
    TileEvent,
    with_toggles,
)
from .tint import TintCoreModel, ternary_matmul

__version__ = "0.1.0"
