from .tensor import (
    AutodiffError,
    Graph,
    Tensor,
    add,
    backward,
    broadcast_to,
    concat,
    custom_op,
    exp,
    forward_op,
    gather_rows,
    layer_norm_lastdim,
    log,
    matmul,
    mul,
    narrow,
    reduce_mean,
    reduce_sum,
    relu,
    reshape,
    scale,
    scatter_mean_rows,
    sigmoid,
    softmax_lastdim,
    sub,
    tanh,
)
from .optim import AdamState, adam_step, clip_grads_, global_grad_norm
from .check import finite_difference_check

__all__ = [
    "AutodiffError", "Graph", "Tensor", "add", "backward", "broadcast_to",
    "concat", "custom_op", "exp", "forward_op", "gather_rows", "layer_norm_lastdim", "log",
    "matmul", "mul", "narrow", "reduce_mean", "reduce_sum", "relu", "reshape",
    "scale", "scatter_mean_rows", "sigmoid", "softmax_lastdim", "sub", "tanh",
    "AdamState", "adam_step", "clip_grads_", "global_grad_norm",
    "finite_difference_check",
]
