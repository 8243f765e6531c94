"""Reverse-mode automatic differentiation on numpy arrays."""

from .nn import BatchNormStats, batchnorm, conv2d, maxpool2d
from .ops import (
    ELEMENTWISE_KINDS,
    EPS_ACOS,
    EPS_LOG,
    add,
    arccos_clamped,
    concat,
    cos,
    div,
    elementwise,
    exp,
    getitem,
    log_clamped,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    sin,
    softmax,
    stack,
    sub,
    sum,
    take_along_axis,
    tanh,
    transpose,
)
from .tensor import (
    Function,
    Tape,
    TapeError,
    Tensor,
    as_tensor,
    backward,
    current_tape,
    no_grad,
    reset_tape,
)
