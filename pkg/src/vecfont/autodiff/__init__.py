"""Minimal float64 tensor library with reverse-mode autodiff."""

from .checkpoint import CheckpointError, load_tensors, save_tensors
from .conv import conv2d, transposed_conv2d
from .gradcheck import DeterminismError, grad_check, relative_error
from .tensor import (
    NEG_INF,
    ShapeError,
    Tensor,
    abs_,
    add,
    as_tensor,
    concat,
    cross_entropy_with_logits,
    div,
    embedding_lookup,
    exp,
    gather,
    gelu,
    is_grad_enabled,
    layer_norm,
    linear,
    log,
    log_softmax,
    masked_fill,
    matmul,
    mean,
    mul,
    no_grad,
    power,
    relu,
    reshape,
    scale,
    sigmoid,
    slice_,
    softmax,
    sqrt,
    square,
    stack,
    sub,
    sum_,
    swapaxes,
    tanh,
    transpose,
)
