"""Small reverse-mode autodiff engine over float64 numpy arrays."""

from . import ops
from .gradcheck import analytic_grads, grad_check
from .ops import (
    add,
    attention,
    concat,
    exp,
    gather_rows,
    getitem,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    relu,
    reshape,
    scale,
    sigmoid,
    softmax,
    sub,
    swap_last,
    tanh,
    transpose,
)
from .ops import sum as tsum
from .optim import SGD, Adam, AdamState, adam_step, make_optimizer
from .tensor import (
    BackwardError,
    DomainError,
    ShapeError,
    Tape,
    Tensor,
    as_tensor,
    backward,
    no_grad,
    parameter,
    zero_grad,
)

__all__ = [
    "Adam", "AdamState", "BackwardError", "DomainError", "SGD", "ShapeError", "Tape",
    "Tensor", "adam_step", "add", "attention", "analytic_grads", "as_tensor", "backward", "concat",
    "exp", "gather_rows", "getitem", "grad_check", "layer_norm", "log", "log_softmax",
    "make_optimizer", "matmul", "mean", "mul", "no_grad", "ops", "parameter", "relu",
    "reshape", "scale", "sigmoid", "softmax", "sub", "swap_last", "tanh", "transpose",
    "tsum", "zero_grad",
]
