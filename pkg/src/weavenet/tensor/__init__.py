"""Small float64 tensor library with reverse-mode differentiation."""
from . import checkpoint, ops
from .core import Parameter, Tape, Tensor, active_tape, as_tensor, backward, set_checked
from .gradcheck import check_gradients, numeric_gradient, relative_error
from .ops import (BatchNormState, add, batch_norm, concat, dense, dropout, gather,
                  gaussian_histogram, gaussian_memberships, l2_loss, masked_sum, mean,
                  mul, relu, reshape, segment_rms, segment_sum, softmax,
                  softmax_cross_entropy, sqrt, square, sub)
from .optim import adagrad_step, sgd_step

__all__ = [
    "Tensor", "Parameter", "Tape", "active_tape", "as_tensor", "backward", "set_checked",
    "check_gradients", "numeric_gradient", "relative_error", "checkpoint", "ops",
    "BatchNormState", "add", "batch_norm", "concat", "dense", "dropout", "gather",
    "gaussian_histogram", "gaussian_memberships", "l2_loss", "masked_sum", "mean", "mul",
    "relu", "reshape", "segment_rms", "segment_sum", "softmax", "softmax_cross_entropy",
    "sqrt", "square", "sub", "adagrad_step", "sgd_step",
]
