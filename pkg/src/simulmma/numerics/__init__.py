"""Float64 tensors, reverse-mode autodiff, gradient oracle, optimizer."""

from .gradcheck import finite_difference_gradient, relative_error
from .optim import Adam, inverse_sqrt_lr
from .tensor import (
    KERNELS,
    ContractError,
    NumericError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    clamp,
    concat,
    cumprod_exclusive_rows,
    cumprod_rows,
    cumsum_rows,
    div,
    embedding,
    exp,
    getitem,
    grad_enabled,
    kernel_apply,
    l2_normalize_rows,
    layer_norm,
    log,
    log_softmax_rows,
    masked_fill,
    matmul,
    mean,
    mul,
    no_grad,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax_rows,
    sqrt,
    stack,
    sub,
    transpose,
    tsum,
)

__all__ = [name for name in dir() if not name.startswith("_")]
