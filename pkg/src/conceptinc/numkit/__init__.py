"""Minimal dense numeric kernel: tensors, seeded randomness, gradients."""

from . import _backend as backend
from .autodiff import (
    Var,
    abs_,
    add,
    concatenate,
    grad,
    layer_norm,
    matmul,
    mean,
    mul,
    neg,
    param,
    reshape,
    sigmoid,
    silu,
    softmax,
    square,
    stack,
    sub,
    sum_,
    swapaxes,
    take,
    transpose,
    value_and_grad,
    value_of,
)
from .optim import Adam
from .finite_diff import finite_diff, max_rel_error, rel_error
from .rng import Rng
from .tensor import as_tensor, check_finite, eye, zeros

__all__ = [
    "Adam", "Rng", "Var", "abs_", "add", "as_tensor", "backend", "check_finite", "concatenate",
    "eye", "finite_diff", "grad", "layer_norm", "matmul", "max_rel_error", "mean", "mul", "neg", "param",
    "rel_error", "reshape", "sigmoid", "silu", "softmax", "square", "stack", "sub", "sum_", "swapaxes",
    "take", "transpose", "value_and_grad", "value_of", "zeros",
]
