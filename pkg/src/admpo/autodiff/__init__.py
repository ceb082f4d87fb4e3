"""Minimal numpy tensor library with reverse-mode gradients and Adam."""
from .checkpoint import CheckpointError, load_params, save_params
from .nn import MLP, GRUCell, Linear, Module
from .optim import Adam, AdamState, adam_step
from .tensor import (
    NonFiniteError,
    ShapeError,
    Tensor,
    add,
    as_tensor,
    backward,
    concat,
    exp,
    gaussian_nll,
    get_dtype,
    gru_cell,
    linear,
    log,
    matmul,
    minimum,
    mul,
    mul_const,
    neg,
    no_grad,
    precision,
    reduce_mean,
    reduce_sum,
    relu,
    set_dtype,
    sigmoid,
    soft_clamp,
    softplus,
    square,
    sub,
    take,
    tanh,
)

__all__ = [name for name in dir() if not name.startswith("_")]
