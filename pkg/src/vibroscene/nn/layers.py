"""Tensors, parameter storage and stateful layers with explicit backward passes."""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import functional as F


@dataclass
class Tensor:
    data: np.ndarray
    requires_grad: bool = True
    grad: np.ndarray | None = field(default=None, repr=False)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.data) if self.requires_grad else None


class ParamStore(OrderedDict):
    """Named tensors in registration order.

    Holds both trainable parameters and batch-norm running statistics
    (the latter with ``requires_grad=False``).
    """

    def add(self, name: str, tensor: Tensor) -> Tensor:
        if name in self:
            raise KeyError(f"duplicate parameter name {name!r}")
        self[name] = tensor
        return tensor

    def trainable(self):
        return [(k, t) for k, t in self.items() if t.requires_grad]

    def zero_grad(self) -> None:
        for _, t in self.trainable():
            t.zero_grad()

    def state(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((k, t.data.copy()) for k, t in self.items())

    def load(self, state) -> None:
        missing = set(self) ^ set(state)
        if missing:
            raise KeyError(f"parameter names differ: {sorted(missing)}")
        for k, t in self.items():
            arr = np.asarray(state[k], dtype=np.float64)
            if arr.shape != t.data.shape:
                raise ValueError(f"{k}: shape {arr.shape} != {t.data.shape}")
            t.data[...] = arr


def _uniform(rng, shape, fan_in):
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    def forward(self, x: np.ndarray, training: bool) -> np.ndarray:
        raise NotImplementedError

    def backward(self, gy: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, store, name, cin, cout, kernel, stride=1, padding=0, dilation=1, rng=None, need_dx=True):
        self.name = name
        self.stride, self.padding, self.dilation = stride, padding, dilation
        self.need_dx = need_dx
        fan_in = cin * kernel * kernel
        self.w = store.add(f"{name}.weight", Tensor(_uniform(rng, (cout, cin, kernel, kernel), fan_in)))
        self.b = store.add(f"{name}.bias", Tensor(_uniform(rng, (cout,), fan_in)))
        self.cache = None

    def forward(self, x, training):
        y, self.cache = F.conv2d_forward(x, self.w.data, self.b.data, self.stride, self.padding, self.dilation, self.name)
        return y

    def backward(self, gy):
        dx, dw, db = F.conv2d_backward(gy, self.cache, self.need_dx)
        self.w.grad += dw
        self.b.grad += db
        self.cache = None
        return dx


class ConvTranspose2d(Layer):
    def __init__(self, store, name, cin, cout, kernel, stride=1, padding=0, dilation=1, output_padding=0, rng=None):
        self.name = name
        self.stride, self.padding, self.dilation, self.output_padding = stride, padding, dilation, output_padding
        fan_in = cin * kernel * kernel
        self.w = store.add(f"{name}.weight", Tensor(_uniform(rng, (cin, cout, kernel, kernel), fan_in)))
        self.b = store.add(f"{name}.bias", Tensor(_uniform(rng, (cout,), fan_in)))
        self.cache = None

    def forward(self, x, training):
        y, self.cache = F.deconv2d_forward(
            x, self.w.data, self.b.data, self.stride, self.padding, self.dilation, self.output_padding, self.name
        )
        return y

    def backward(self, gy):
        dx, dw, db = F.deconv2d_backward(gy, self.cache)
        self.w.grad += dw
        self.b.grad += db
        self.cache = None
        return dx


class BatchNorm2d(Layer):
    def __init__(self, store, name, channels):
        self.scale = store.add(f"{name}.scale", Tensor(np.ones(channels)))
        self.shift = store.add(f"{name}.shift", Tensor(np.zeros(channels)))
        self.running_mean = store.add(f"{name}.running_mean", Tensor(np.zeros(channels), requires_grad=False))
        self.running_var = store.add(f"{name}.running_var", Tensor(np.ones(channels), requires_grad=False))
        self.momentum = F.BN_MOMENTUM  # None: cumulative average over batches seen since reset_stats
        self.batches = 0
        self.cache = None

    def reset_stats(self, momentum=None):
        self.running_mean.data[:] = 0.0
        self.running_var.data[:] = 0.0
        self.momentum = momentum
        self.batches = 0

    def forward(self, x, training):
        momentum = self.momentum if self.momentum is not None else 1.0 / (self.batches + 1)
        y, self.cache = F.batchnorm_forward(
            x, self.scale.data, self.shift.data, self.running_mean.data, self.running_var.data, training,
            momentum=momentum,
        )
        if training:
            self.batches += 1
        return y

    def backward(self, gy):
        dx, dscale, dshift = F.batchnorm_backward(gy, self.cache)
        self.scale.grad += dscale
        self.shift.grad += dshift
        self.cache = None
        return dx


class ReLU(Layer):
    def forward(self, x, training):
        y, self.cache = F.relu_forward(x)
        return y

    def backward(self, gy):
        return F.relu_backward(gy, self.cache)


class Sigmoid(Layer):
    def forward(self, x, training):
        y, self.cache = F.sigmoid_forward(x)
        return y

    def backward(self, gy):
        return F.sigmoid_backward(gy, self.cache)


class Resize(Layer):
    """Nearest-neighbour resize to a spatial size fixed at call time."""

    def __init__(self):
        self.target = None

    def forward(self, x, training):
        y, self.cache = F.nearest_resize_forward(x, self.target)
        return y

    def backward(self, gy):
        return F.nearest_resize_backward(gy, self.cache)


class Sequential(Layer):
    def __init__(self, *layers):
        self.layers = list(layers)

    def forward(self, x, training):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, gy):
        for layer in reversed(self.layers):
            gy = layer.backward(gy)
        return gy
