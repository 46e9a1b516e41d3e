from .core import (
    BackwardError,
    NonFiniteError,
    Tensor,
    TensorError,
    add,
    as_tensor,
    bilinear_matrix,
    concat,
    conv2d,
    conv_output_size,
    exp,
    gelu,
    index,
    log,
    log_softmax_lastdim,
    make_op,
    matmul,
    mean,
    mul,
    permute,
    pow_,
    relu,
    reshape,
    softmax_lastdim,
    stack,
    sub,
    sum_,
    transpose,
    upsample_bilinear,
    zero_grad,
)
from .gradcheck import GradCheckReport, NonDeterministicError, grad_check
from .nn import Conv2d, Linear, Module

__all__ = [
    "BackwardError",
    "Conv2d",
    "GradCheckReport",
    "Linear",
    "Module",
    "NonDeterministicError",
    "NonFiniteError",
    "Tensor",
    "TensorError",
    "add",
    "as_tensor",
    "bilinear_matrix",
    "concat",
    "conv2d",
    "conv_output_size",
    "exp",
    "gelu",
    "grad_check",
    "index",
    "log",
    "log_softmax_lastdim",
    "make_op",
    "matmul",
    "mean",
    "mul",
    "permute",
    "pow_",
    "relu",
    "reshape",
    "softmax_lastdim",
    "stack",
    "sub",
    "sum_",
    "transpose",
    "upsample_bilinear",
    "zero_grad",
]
