"""Post-training weight compression with entropy-regularized weight updates.

Rate-aware grid-search quantization interleaved with closed-form
loss-compensating weight updates, plus the entropy models, range coder and
file formats needed to produce and evaluate compressed models end to end.
"""

from .engine import (
    CompressionConfig,
    LayerResult,
    compress_layer,
    quantization_step,
    quantize_layer,
    rtn_layer,
)
from .entropy import (
    ADAPTIVE,
    CONTEXT,
    MODEL_KINDS,
    STATIC,
    EntropyModel,
    SymbolDistribution,
    make_model,
    rate_bits,
)
from .errors import (
    CerwuError,
    DecodeError,
    FactorizationError,
    InputError,
    ParseError,
    SearchSpaceError,
    ShapeError,
)
from .grids import (
    COLUMN_MAJOR,
    ROW_MAJOR,
    Grid,
    QuantizedLayer,
    build_grid,
    grid_from_scale,
    round_to_nearest,
)
from .linalg import (
    LayerContext,
    accumulate_hessian,
    build_context,
    compute_gamma,
)
from .modelio import (
    CompressedModel,
    QuantizedRecord,
    RawRecord,
    TensorFile,
    load_tensor_file,
    read_compressed,
    unfold_convolution,
    write_compressed,
    write_tensor_file,
)
from .oracle import (
    ObjectiveBreakdown,
    brute_force_minimize,
    constrained_quadratic_minimizer,
    evaluate_objective,
)
from .rangecoder import Payload, decode, encode
from .sweep import SweepPoint, pareto_front, run_sweep

__version__ = "0.1.0"

__all__ = [
    "ADAPTIVE",
    "CONTEXT",
    "COLUMN_MAJOR",
    "CerwuError",
    "CompressedModel",
    "CompressionConfig",
    "DecodeError",
    "EntropyModel",
    "FactorizationError",
    "Grid",
    "InputError",
    "LayerContext",
    "LayerResult",
    "MODEL_KINDS",
    "ObjectiveBreakdown",
    "ParseError",
    "Payload",
    "QuantizedLayer",
    "QuantizedRecord",
    "ROW_MAJOR",
    "RawRecord",
    "STATIC",
    "SearchSpaceError",
    "ShapeError",
    "SweepPoint",
    "SymbolDistribution",
    "TensorFile",
    "accumulate_hessian",
    "brute_force_minimize",
    "build_context",
    "build_grid",
    "compress_layer",
    "compute_gamma",
    "constrained_quadratic_minimizer",
    "decode",
    "encode",
    "evaluate_objective",
    "grid_from_scale",
    "load_tensor_file",
    "make_model",
    "pareto_front",
    "quantization_step",
    "quantize_layer",
    "rate_bits",
    "read_compressed",
    "round_to_nearest",
    "rtn_layer",
    "run_sweep",
    "unfold_convolution",
    "write_compressed",
    "write_tensor_file",
]
