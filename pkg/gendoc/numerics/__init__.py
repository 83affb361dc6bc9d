"""Dense tensors, reverse-mode autodiff and the gradient-check oracle"""

from .functional import (
    IGNORE_INDEX,
    conv2d,
    conv_transpose2d,
    cross_entropy,
    embedding,
    layer_norm,
    linear,
    log_softmax,
    mse,
    softmax,
    softmax_rows,
)
from .gradcheck import GradReport, grad_check
from .optim import Adam, lr_at
from .tensor import (
    Tensor,
    as_tensor,
    concat,
    default_dtype,
    no_grad,
    parameter,
    precision,
    stack,
    where,
)

__all__ = [
    "IGNORE_INDEX",
    "Adam",
    "GradReport",
    "Tensor",
    "as_tensor",
    "concat",
    "conv2d",
    "conv_transpose2d",
    "cross_entropy",
    "default_dtype",
    "embedding",
    "grad_check",
    "layer_norm",
    "linear",
    "log_softmax",
    "lr_at",
    "mse",
    "no_grad",
    "parameter",
    "precision",
    "softmax",
    "softmax_rows",
    "stack",
    "where",
]
