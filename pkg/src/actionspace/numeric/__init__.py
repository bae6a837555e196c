"""Reverse-mode autodiff, gradient checking, optimisation and checkpoints."""
from .checkpoint import config_hash, load_checkpoint, read_container, save_checkpoint, write_container
from .gradcheck import grad_check, grad_check_parameters
from .optim import Adam, ReduceOnPlateau
from .tensor import (
    PRIMITIVES,
    Graph,
    Tensor,
    abs_,
    active_graph,
    add,
    apply_primitive,
    as_tensor,
    atan,
    atan2,
    backward,
    clamp,
    concat,
    conv2d,
    cos,
    div,
    exp,
    huber,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    neg,
    relu,
    reshape,
    sigmoid,
    sin,
    slice_,
    softmax,
    sqrt,
    stack,
    sub,
    sum_,
    tan,
    tanh,
    transpose,
)
