"""Minimal reverse-mode autodiff over float64 numpy arrays."""

from driveflow.nnkit.autodiff import (
    Node,
    ShapeMismatchError,
    Tape,
    TapeReuseError,
    add,
    affine,
    attention,
    concat,
    embedding_lookup,
    exp,
    gated_mlp,
    layer_norm,
    log_softmax,
    matmul,
    maximum,
    mean_,
    minimum,
    mul,
    neg,
    pick,
    reshape,
    scale,
    silu,
    softmax,
    square,
    sub,
    sum_,
    tanh,
    transpose,
    value_of,
)
from driveflow.nnkit.params import (
    AdamState,
    GradCheckResult,
    ParamStore,
    adam_step,
    grad_check,
)

__all__ = [
    "AdamState",
    "GradCheckResult",
    "Node",
    "ParamStore",
    "ShapeMismatchError",
    "Tape",
    "TapeReuseError",
    "adam_step",
    "add",
    "affine",
    "attention",
    "concat",
    "embedding_lookup",
    "exp",
    "gated_mlp",
    "grad_check",
    "layer_norm",
    "log_softmax",
    "matmul",
    "maximum",
    "mean_",
    "minimum",
    "mul",
    "neg",
    "pick",
    "reshape",
    "scale",
    "silu",
    "softmax",
    "square",
    "sub",
    "sum_",
    "tanh",
    "transpose",
    "value_of",
]
