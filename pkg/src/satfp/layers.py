"""Minimal layer zoo for the fingerprinting autoencoder.

Each layer is stateless apart from its parameters: forward returns
(output, cache) and backward consumes (grad, cache), accumulating parameter
gradients into ``grads``. Everything runs on the selected kernel backend.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .errors import ShapeError


class Layer:
    """Base: parameterless layers keep empty params/grads dicts."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def init_params(self, rng: np.random.Generator, dtype) -> None:
        pass

    def zero_grads(self) -> None:
        for name, p in self.params.items():
            self.grads[name] = np.zeros_like(p)

    def forward(self, x):
        raise NotImplementedError

    def backward(self, grad, cache):
        raise NotImplementedError


def _uniform_fan_in(rng: np.random.Generator, shape, fan_in: int, dtype) -> np.ndarray:
    limit = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


class Conv1d(Layer):
    """Stride-1 same-padding 1-D convolution; kernel size must be odd."""

    def __init__(self, in_channels: int, out_channels: int, kernel_size: int):
        super().__init__()
        if kernel_size % 2 != 1:
            raise ShapeError(f"kernel size must be odd, got {kernel_size}")
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.kernel_size = kernel_size

    def init_params(self, rng, dtype):
        fan_in = self.in_channels * self.kernel_size
        self.params = {
            "weight": _uniform_fan_in(
                rng, (self.out_channels, self.in_channels, self.kernel_size), fan_in, dtype
            ),
            "bias": _uniform_fan_in(rng, (self.out_channels,), fan_in, dtype),
        }

    def forward(self, x):
        y = kernels.conv1d_forward(x, self.params["weight"], self.params["bias"])
        return y, x

    def backward(self, grad, cache):
        x = cache
        dw, db = kernels.conv1d_backward_weights(grad, x, self.kernel_size)
        self.grads["weight"] += dw
        self.grads["bias"] += db
        return kernels.conv1d_backward_input(grad, self.params["weight"])


class ReLU(Layer):
    def forward(self, x):
        y = np.maximum(x, 0)
        return y, x > 0

    def backward(self, grad, cache):
        return grad * cache


class MaxPool1d(Layer):
    def __init__(self, factor: int):
        super().__init__()
        self.factor = factor

    def forward(self, x):
        if x.shape[2] % self.factor != 0:
            raise ShapeError(f"length {x.shape[2]} not divisible by pool factor {self.factor}")
        y, idx = kernels.maxpool1d_forward(x, self.factor)
        return y, idx

    def backward(self, grad, cache):
        return kernels.maxpool1d_backward(grad, cache, self.factor)


class Upsample1d(Layer):
    """Nearest-neighbor upsampling by an integer factor."""

    def __init__(self, factor: int):
        super().__init__()
        self.factor = factor

    def forward(self, x):
        return np.ascontiguousarray(np.repeat(x, self.factor, axis=2)), None

    def backward(self, grad, cache):
        n, c, length = grad.shape
        return grad.reshape(n, c, length // self.factor, self.factor).sum(axis=3)


class Dense(Layer):
    def __init__(self, in_features: int, out_features: int):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features

    def init_params(self, rng, dtype):
        self.params = {
            "weight": _uniform_fan_in(
                rng, (self.out_features, self.in_features), self.in_features, dtype
            ),
            "bias": _uniform_fan_in(rng, (self.out_features,), self.in_features, dtype),
        }

    def forward(self, x):
        return x @ self.params["weight"].T + self.params["bias"], x

    def backward(self, grad, cache):
        x = cache
        self.grads["weight"] += grad.T @ x
        self.grads["bias"] += grad.sum(axis=0)
        return grad @ self.params["weight"]


class Sequential(Layer):
    def __init__(self, *layers: Layer):
        super().__init__()
        self.layers = list(layers)

    def init_params(self, rng, dtype):
        for layer in self.layers:
            layer.init_params(rng, dtype)

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()

    def forward(self, x):
        caches = []
        for layer in self.layers:
            x, cache = layer.forward(x)
            caches.append(cache)
        return x, caches

    def backward(self, grad, caches):
        for layer, cache in zip(reversed(self.layers), reversed(caches)):
            grad = layer.backward(grad, cache)
        return grad
