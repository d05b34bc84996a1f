"""Minimal tensor library: autodiff tape, layers, loss and Adam."""

from . import functional
from .gradcheck import check_gradients, numeric_grad, relative_error
from .layers import (BatchNorm2d, Conv2d, Dropout, Flatten, GlobalAvgPool2d, Linear, MaxPool2d,
                     Module, ReLU, Sequential)
from .optim import Adam
from .tensor import Tensor

__all__ = [
    "Adam", "BatchNorm2d", "Conv2d", "Dropout", "Flatten", "GlobalAvgPool2d", "Linear",
    "MaxPool2d", "Module", "ReLU", "Sequential", "Tensor", "check_gradients", "functional",
    "numeric_grad", "relative_error",
]
