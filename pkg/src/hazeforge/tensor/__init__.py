"""Minimal rank-4 tensor library with reverse-mode autodiff."""

from .core import ContractError, ShapeError, TapeNode, Tensor, backward, inject_gradient, record
from .ops import (
    abs,
    activation,
    add,
    concat_batch,
    conv2d,
    conv2d_transpose,
    instance_norm,
    leaky_relu,
    mean,
    relu,
    scalar_add,
    scalar_mul,
    square,
    sub,
    sum,
    tanh,
)

__all__ = [
    "ContractError",
    "ShapeError",
    "TapeNode",
    "Tensor",
    "backward",
    "inject_gradient",
    "record",
    "abs",
    "activation",
    "add",
    "concat_batch",
    "conv2d",
    "conv2d_transpose",
    "instance_norm",
    "leaky_relu",
    "mean",
    "relu",
    "scalar_add",
    "scalar_mul",
    "square",
    "sub",
    "sum",
    "tanh",
]
