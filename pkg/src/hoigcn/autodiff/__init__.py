from .functional import (
    batch_norm,
    dropout,
    graph_conv,
    gru_scan,
    log_softmax,
    pick,
    softmax,
    temporal_conv1d,
)
from .gradcheck import finite_diff_check, finite_diff_errors
from .tensor import (
    Parameter,
    Tape,
    Tensor,
    active_tape,
    add,
    as_tensor,
    backward,
    concat,
    elementwise,
    linear,
    matmul,
    mean,
    mul,
    narrow,
    neg,
    no_grad,
    relu,
    reshape,
    select,
    sigmoid,
    stack,
    sub,
    sum,
    tanh,
    transpose,
)

__all__ = [
    "Parameter", "Tape", "Tensor", "active_tape", "add", "as_tensor", "backward",
    "batch_norm", "concat", "dropout", "elementwise", "finite_diff_check",
    "finite_diff_errors", "graph_conv", "gru_scan", "linear", "log_softmax", "matmul", "mean",
    "mul", "narrow", "neg", "no_grad", "pick", "relu", "reshape", "select",
    "sigmoid", "softmax", "stack", "sub", "sum", "tanh", "temporal_conv1d",
    "transpose",
]
