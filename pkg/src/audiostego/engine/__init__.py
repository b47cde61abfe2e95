from .conv import batch_norm2d, conv2d, conv_transpose2d
from .optim import AdamState, adam_step
from .tensor import (
    ContractError,
    DimensionError,
    NumericError,
    Tape,
    Tensor,
    abs_,
    add,
    backward,
    clip,
    concat,
    getitem,
    leaky_relu,
    mean_all,
    mul,
    record,
    reshape,
    scale,
    square,
    sub,
    sum_all,
    transpose,
    zero_grad,
)

__all__ = [
    "AdamState",
    "ContractError",
    "DimensionError",
    "NumericError",
    "Tape",
    "Tensor",
    "abs_",
    "adam_step",
    "add",
    "backward",
    "batch_norm2d",
    "clip",
    "concat",
    "conv2d",
    "conv_transpose2d",
    "getitem",
    "leaky_relu",
    "mean_all",
    "mul",
    "record",
    "reshape",
    "scale",
    "square",
    "sub",
    "sum_all",
    "transpose",
    "zero_grad",
]
