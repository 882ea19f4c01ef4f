from .checkpoint import load_tensors, save_tensors
from .gradcheck import grad_check
from .optim import Adam, AdamState, adam_step
from .tensor import (
    DTYPES,
    Tape,
    Tensor,
    add,
    arccos,
    as_tensor,
    backward,
    clamp,
    concat,
    cross,
    current_tape,
    div,
    exp,
    getitem,
    layer_norm,
    linear,
    log,
    matmul,
    mean,
    mul,
    neg,
    permute,
    reshape,
    silu,
    softmax,
    sqrt,
    square,
    stack,
    sub,
    sum_,
    transpose,
)
