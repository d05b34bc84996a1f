"""Stateful layers that own named parameters and buffers."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor


class Module:
    """Base class: parameters, buffers, child modules and a train/eval flag."""

    def __init__(self):
        self.training = True
        self._params: dict[str, Tensor] = {}
        self._buffers: dict[str, np.ndarray] = {}
        self._children: dict[str, Module] = {}

    def add_param(self, name: str, value: np.ndarray) -> Tensor:
        t = Tensor(value, requires_grad=True)
        self._params[name] = t
        return t

    def add_buffer(self, name: str, value: np.ndarray) -> np.ndarray:
        self._buffers[name] = value
        return value

    def add_child(self, name: str, module: "Module") -> "Module":
        self._children[name] = module
        return module

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Tensor]]:
        for name, p in self._params.items():
            yield prefix + name, p
        for cname, child in self._children.items():
            yield from child.named_parameters(f"{prefix}{cname}.")

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, b in self._buffers.items():
            yield prefix + name, b
        for cname, child in self._children.items():
            yield from child.named_buffers(f"{prefix}{cname}.")

    def parameters(self) -> list[Tensor]:
        return [p for _, p in self.named_parameters()]

    def state_dict(self) -> dict[str, np.ndarray]:
        """Parameters and buffers by dotted name (arrays are live, not copies)."""
        state = {name: p.data for name, p in self.named_parameters()}
        for name, b in self.named_buffers():
            if name in state:
                raise ValueError(f"duplicate state name {name!r}")
            state[name] = b
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Copy values in place. Names and shapes must already have been checked."""
        for name, p in self.named_parameters():
            p.data = np.array(state[name], dtype=p.data.dtype)
        for name, b in self.named_buffers():
            b[...] = state[name]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def train(self, mode: bool = True) -> "Module":
        self.training = mode
        for child in self._children.values():
            child.train(mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def forward(self, x: Tensor, rng: np.random.Generator | None = None) -> Tensor:
        raise NotImplementedError

    def __call__(self, x, rng: np.random.Generator | None = None) -> Tensor:
        if not isinstance(x, Tensor):
            x = Tensor(x)
        return self.forward(x, rng)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape).astype(dtype)


class Conv2d(Module):
    def __init__(self, in_channels: int, out_channels: int, kernel_size: int, stride: int = 1,
                 padding="same", bias: bool = True, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.stride = stride
        self.padding = padding
        fan_in = in_channels * kernel_size * kernel_size
        self.weight = self.add_param(
            "weight", kaiming_uniform(rng, (out_channels, in_channels, kernel_size, kernel_size),
                                      fan_in, dtype))
        self.bias = self.add_param("bias", np.zeros(out_channels, dtype=dtype)) if bias else None

    def forward(self, x, rng=None):
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5, dtype=np.float32):
        super().__init__()
        self.momentum = momentum
        self.eps = eps
        self.weight = self.add_param("weight", np.ones(channels, dtype=dtype))
        self.bias = self.add_param("bias", np.zeros(channels, dtype=dtype))
        self.running_mean = self.add_buffer("running_mean", np.zeros(channels, dtype=dtype))
        self.running_var = self.add_buffer("running_var", np.ones(channels, dtype=dtype))

    def forward(self, x, rng=None):
        return F.batch_norm2d(x, self.weight, self.bias, self.running_mean, self.running_var,
                              self.training, self.momentum, self.eps)


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator | None = None,
                 dtype=np.float32):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = self.add_param(
            "weight", kaiming_uniform(rng, (in_features, out_features), in_features, dtype))
        self.bias = self.add_param("bias", np.zeros(out_features, dtype=dtype))

    def forward(self, x, rng=None):
        return F.linear(x, self.weight, self.bias)


class ReLU(Module):
    def forward(self, x, rng=None):
        return F.relu(x)


class MaxPool2d(Module):
    def __init__(self, window: int, stride: int | None = None, padding: int = 0):
        super().__init__()
        self.window = window
        self.stride = stride
        self.padding = padding

    def forward(self, x, rng=None):
        return F.max_pool2d(x, self.window, self.stride, self.padding)


class Dropout(Module):
    def __init__(self, p: float):
        super().__init__()
        if not 0.0 <= p < 1.0:
            raise ValueError(f"dropout probability must be in [0, 1), got {p}")
        self.p = p

    def forward(self, x, rng=None):
        return F.dropout(x, self.p, self.training, rng)


class Flatten(Module):
    def forward(self, x, rng=None):
        return F.flatten(x)


class GlobalAvgPool2d(Module):
    def forward(self, x, rng=None):
        return F.global_avg_pool2d(x)


class Sequential(Module):
    def __init__(self, *layers: tuple[str, Module]):
        super().__init__()
        self.layers: list[Module] = []
        for name, layer in layers:
            self.add_child(name, layer)
            self.layers.append(layer)

    def forward(self, x, rng=None):
        for layer in self.layers:
            x = layer(x, rng)
        return x
