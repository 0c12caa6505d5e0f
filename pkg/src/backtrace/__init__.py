"""Relevance backtracing for portable small-model graphs.

Load a model, run a sample forward to capture its activation trace, then
propagate relevance from the output back to the inputs:

    from backtrace import load_model_files, forward, backtrace

    model = load_model_files("models/oracle_mlp2.manifest.json")
    prediction, trace = forward(model, [0.5, -1.0, 2.0])
    rmap = backtrace(model, trace)
    print(rmap.leaf_relevance())

The metrics module scores attributions by perturbation; the cli module
wraps everything for the command line.
"""

from .activations import ActivationDesc
from .errors import (
    AllZeroAttribution,
    BacktraceError,
    BatchForwardError,
    DanglingEdge,
    EmptyInput,
    IncompleteTrace,
    MalformedManifest,
    NonFiniteValue,
    ShapeMismatch,
    UnknownKind,
    WeightsOverrun,
)
from .forward import ActivationTrace, forward, forward_batch
from .metrics import (
    MetricReport,
    PerturbationConfig,
    complexity,
    faithfulness_correlation,
    max_sensitivity,
    morf_lerf,
    mprt,
    pixel_flipping,
    random_attribution_baseline,
)
from .model import GraphModel, NodeSpec, ParamRef, models_equal
from .relevance import (
    RelevanceMap,
    StartSpec,
    UnitDecomposition,
    backtrace,
    decompose_unit,
    global_importance,
    propagate_attention,
    propagate_contrastive_dense,
    propagate_conv2d,
    propagate_default_dense,
    propagate_structural,
)
from .serialize import load_model, load_model_files, save_model, save_model_files

__version__ = "0.1.0"

__all__ = [
    "ActivationDesc",
    "ActivationTrace",
    "AllZeroAttribution",
    "BacktraceError",
    "BatchForwardError",
    "DanglingEdge",
    "EmptyInput",
    "GraphModel",
    "IncompleteTrace",
    "MalformedManifest",
    "MetricReport",
    "NodeSpec",
    "NonFiniteValue",
    "ParamRef",
    "PerturbationConfig",
    "RelevanceMap",
    "ShapeMismatch",
    "StartSpec",
    "UnitDecomposition",
    "UnknownKind",
    "WeightsOverrun",
    "backtrace",
    "complexity",
    "decompose_unit",
    "faithfulness_correlation",
    "forward",
    "forward_batch",
    "global_importance",
    "load_model",
    "load_model_files",
    "max_sensitivity",
    "models_equal",
    "morf_lerf",
    "mprt",
    "pixel_flipping",
    "propagate_attention",
    "propagate_contrastive_dense",
    "propagate_conv2d",
    "propagate_default_dense",
    "propagate_structural",
    "random_attribution_baseline",
    "save_model",
    "save_model_files",
]
