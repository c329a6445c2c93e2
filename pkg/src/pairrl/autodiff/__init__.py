"""Minimal reverse-mode autodiff, Adam and checkpoint I/O."""

from pairrl.autodiff.checkpoint import load_checkpoint, save_checkpoint
from pairrl.autodiff.gradcheck import grad_check
from pairrl.autodiff.optim import AdamState, adam_step
from pairrl.autodiff.tensor import (
    Tensor,
    add,
    astype,
    backward,
    clip,
    clip_min,
    concat,
    exp,
    is_grad_enabled,
    log,
    log_softmax,
    matmul,
    maximum,
    mean,
    minimum,
    mul,
    neg,
    no_grad,
    relu,
    reshape,
    scale,
    softmax,
    square,
    stop_grad,
    sub,
    sum_,
    take,
    tanh,
    zero_grad,
)

__all__ = [
    "AdamState", "Tensor", "adam_step", "add", "astype", "backward", "clip", "clip_min",
    "concat", "exp", "grad_check", "is_grad_enabled", "load_checkpoint", "log", "log_softmax",
    "matmul", "maximum", "mean", "minimum", "mul", "neg", "no_grad", "relu", "reshape",
    "save_checkpoint", "scale", "softmax", "square", "stop_grad", "sub", "sum_", "take", "tanh",
    "zero_grad",
]
