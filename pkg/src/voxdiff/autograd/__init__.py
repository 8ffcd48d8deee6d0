"""Minimal reverse-mode autodiff: tensors, ops, AdamW, checkpoints."""
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .optim import AdamW, OptimState, opt_step
from .params import ParamStore
from .tensor import (
    BCE_CLAMP,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    bce,
    concat,
    conv2d,
    conv3d,
    conv_transpose2d,
    conv_transpose3d,
    group_norm,
    huber,
    l1,
    linear,
    matmul,
    mean,
    mse,
    mul,
    no_grad,
    relu,
    reshape,
    sigmoid,
    silu,
    slice_,
    sub,
    sum_,
    transpose,
)

__all__ = [
    "AdamW", "BCE_CLAMP", "CheckpointError", "OptimState", "ParamStore", "ShapeError", "Tensor",
    "add", "as_tensor", "backward", "bce", "concat", "conv2d", "conv3d", "conv_transpose2d",
    "conv_transpose3d", "group_norm", "huber", "l1", "linear", "load_checkpoint", "matmul", "mean",
    "mse", "mul", "no_grad", "opt_step", "relu", "reshape", "save_checkpoint", "sigmoid", "silu",
    "slice_", "sub", "sum_", "transpose",
]
