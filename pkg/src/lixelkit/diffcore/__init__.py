"""Reverse-mode autodiff engine, optimizer, and checkpoint format."""

from .tensor import (
    DIV_EPS,
    EXP_MAX,
    ShapeError,
    Tensor,
    absolute,
    add,
    as_tensor,
    batch_norm,
    bmm,
    concat,
    conv1d,
    conv2d,
    conv_transpose1d,
    conv_transpose2d,
    div,
    exp,
    flip,
    fully_connected,
    gather_rows,
    l2_norm,
    matmul,
    mul,
    relu,
    reshape,
    softmax,
    sqrt,
    sub,
    take,
    tmax,
    tmean,
    transpose,
    tsum,
)
from .gradcheck import grad_check
from .optim import Adam, AdamState, OptimError, adam_step
from .checkpoint import load_checkpoint, save_checkpoint
from . import nn

__all__ = [
    "DIV_EPS",
    "EXP_MAX",
    "ShapeError",
    "Tensor",
    "absolute",
    "add",
    "as_tensor",
    "batch_norm",
    "bmm",
    "concat",
    "conv1d",
    "conv2d",
    "conv_transpose1d",
    "conv_transpose2d",
    "div",
    "exp",
    "flip",
    "fully_connected",
    "gather_rows",
    "grad_check",
    "l2_norm",
    "matmul",
    "mul",
    "relu",
    "reshape",
    "softmax",
    "sqrt",
    "sub",
    "take",
    "tmax",
    "tmean",
    "transpose",
    "tsum",
    "Adam",
    "AdamState",
    "OptimError",
    "adam_step",
    "load_checkpoint",
    "save_checkpoint",
    "nn",
]
