"""Reverse-mode automatic differentiation over float64 arrays."""

from .check import gradcheck
from .core import (
    NEG_INF,
    Value,
    add,
    as_value,
    backward,
    broadcast_to,
    clip,
    concat,
    cumsum,
    detach,
    div,
    exp,
    getitem,
    log,
    log_sigmoid,
    log_softmax,
    logsumexp,
    masked_fill,
    matmul,
    maximum,
    mean,
    mul,
    neg,
    power,
    relu,
    reshape,
    sigmoid,
    softmax,
    sqrt,
    square,
    stack,
    straight_through,
    sub,
    swapaxes,
    tanh,
    transpose,
    vabs,
    vmax,
    vsum,
    where,
)
from .nn import Adam, GRUCell, Params, affine, glorot

__all__ = [name for name in dir() if not name.startswith("_")]
