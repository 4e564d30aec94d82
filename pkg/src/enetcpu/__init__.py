"""CPU inference engine, graph optimizer, and static cost analyzer for the
ENet encoder-decoder segmentation architecture."""

from .analyzer import (
    ClassHistogram,
    CostReport,
    FlopConvention,
    SizeReport,
    bound_class_weights,
    compute_class_weights,
    count_flops,
    count_params,
    load_histogram,
    model_size_fp16,
)
from .enwt import load_weights, read_index, save_weights
from .errors import (
    BuildError,
    CorruptIndicesError,
    EnetError,
    ExecutionError,
    FoldError,
    FormatError,
    PaletteError,
    ShapeError,
    ValidationError,
)
from .graph import (
    BottleneckKind,
    Graph,
    GraphBuilder,
    NodeKind,
    NodeSpec,
    build_bottleneck,
    build_enet,
    build_initial_block,
    expected_weight_shapes,
    infer_shapes,
    init_weights,
)
from .kernels import (
    BnParams,
    ConvParams,
    batchnorm_infer,
    conv2d,
    conv_asymmetric5,
    conv_transpose2d,
    max_unpool2x2,
    maxpool2x2,
    prelu,
)
from .passes import (
    PassReport,
    elide_dropout,
    fold_batchnorm,
    optimize,
    validate,
)
from .pnm import (
    load_labelmap,
    load_palette,
    load_ppm,
    save_colormap,
    save_labelmap,
    save_ppm,
)
from .runtime import (
    BenchResult,
    ExecutionPlan,
    argmax_labels,
    benchmark,
    execute,
    plan_buffers,
)
from .tensor import DType, Shape, approx_eq, as_tensor, create

__version__ = "0.1.0"

__all__ = [
    "BenchResult",
    "BnParams",
    "BottleneckKind",
    "BuildError",
    "ClassHistogram",
    "ConvParams",
    "CorruptIndicesError",
    "CostReport",
    "DType",
    "EnetError",
    "ExecutionError",
    "ExecutionPlan",
    "FlopConvention",
    "FoldError",
    "FormatError",
    "Graph",
    "GraphBuilder",
    "NodeKind",
    "NodeSpec",
    "PaletteError",
    "PassReport",
    "Shape",
    "ShapeError",
    "SizeReport",
    "ValidationError",
    "approx_eq",
    "argmax_labels",
    "as_tensor",
    "batchnorm_infer",
    "benchmark",
    "bound_class_weights",
    "build_bottleneck",
    "build_enet",
    "build_initial_block",
    "compute_class_weights",
    "conv2d",
    "conv_asymmetric5",
    "conv_transpose2d",
    "count_flops",
    "count_params",
    "create",
    "elide_dropout",
    "execute",
    "expected_weight_shapes",
    "fold_batchnorm",
    "infer_shapes",
    "init_weights",
    "load_histogram",
    "load_labelmap",
    "load_palette",
    "load_ppm",
    "load_weights",
    "max_unpool2x2",
    "maxpool2x2",
    "model_size_fp16",
    "optimize",
    "plan_buffers",
    "prelu",
    "read_index",
    "save_colormap",
    "save_labelmap",
    "save_ppm",
    "save_weights",
    "validate",
]
