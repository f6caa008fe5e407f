"""Layers with explicit forward/backward passes in float64 numpy.

Every layer caches what its backward pass needs during ``forward`` and
exposes ``params`` / ``grads`` dicts with matching keys and shapes.
Convolution tensors are ``(batch, channels, length)``.
"""

from __future__ import annotations

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..exceptions import ConfigError, ShapeError, StateError


class Layer:
    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise StateError(f"{type(self).__name__}.backward called before forward")
        return self._cache

    def zero_grad(self):
        for k, v in self.grads.items():
            v[...] = 0.0

    def describe(self) -> dict:
        return {"type": type(self).__name__}


class Conv1D(Layer):
    """Cross-correlation ``y[o, t] = b[o] + sum_{c,j} W[o, c, j] x[c, s*t + j - pad]``."""

    def __init__(self, in_channels, out_channels, kernel_size=3, stride=1, padding=1, rng=None):
        super().__init__()
        if min(in_channels, out_channels, kernel_size, stride) < 1 or padding < 0:
            raise ConfigError("invalid Conv1D geometry")
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel_size, self.stride, self.padding = kernel_size, stride, padding
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel_size
        self.params["W"] = rng.standard_normal((out_channels, in_channels, kernel_size)) * math.sqrt(2.0 / fan_in)
        self.params["b"] = np.zeros(out_channels)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def output_length(self, length):
        return (length + 2 * self.padding - self.kernel_size) // self.stride + 1

    def forward(self, x, training=False):
        if x.ndim != 3 or x.shape[1] != self.in_channels:
            raise ShapeError(f"Conv1D expects (B, {self.in_channels}, L), got {x.shape}")
        b, c, length = x.shape
        l_out = self.output_length(length)
        if l_out < 1:
            raise ShapeError(f"kernel {self.kernel_size} does not fit padded length {length + 2 * self.padding}")
        p = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p))) if p else x
        # (B, C, L_out, k) -> (B, L_out, C, k)
        win = sliding_window_view(xp, self.kernel_size, axis=2)[:, :, ::self.stride][:, :, :l_out]
        cols = np.ascontiguousarray(win.transpose(0, 2, 1, 3)).reshape(b * l_out, c * self.kernel_size)
        w = self.params["W"].reshape(self.out_channels, -1)
        y = cols @ w.T + self.params["b"]
        self._cache = (cols, xp.shape, l_out)
        return np.ascontiguousarray(y.reshape(b, l_out, self.out_channels).transpose(0, 2, 1))

    def backward(self, grad):
        cols, xp_shape, l_out = self._cached()
        b, c, lp = xp_shape
        g = grad.transpose(0, 2, 1).reshape(b * l_out, self.out_channels)
        self.grads["W"] += (g.T @ cols).reshape(self.params["W"].shape)
        self.grads["b"] += g.sum(axis=0)
        dcols = (g @ self.params["W"].reshape(self.out_channels, -1)).reshape(b, l_out, c, self.kernel_size)
        dxp = np.zeros(xp_shape)
        s = self.stride
        for j in range(self.kernel_size):
            dxp[:, :, j:j + s * (l_out - 1) + 1:s] += dcols[:, :, :, j].transpose(0, 2, 1)
        p = self.padding
        return dxp[:, :, p:lp - p] if p else dxp

    def describe(self):
        return {"type": "Conv1D", "in": self.in_channels, "out": self.out_channels,
                "kernel": self.kernel_size, "stride": self.stride, "padding": self.padding}


class Dense(Layer):
    def __init__(self, in_features, out_features, rng=None, gain=2.0):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.in_features, self.out_features = in_features, out_features
        self.params["W"] = rng.standard_normal((in_features, out_features)) * math.sqrt(gain / in_features)
        self.params["b"] = np.zeros(out_features)
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.in_features:
            raise ShapeError(f"Dense expects (B, {self.in_features}), got {x.shape}")
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        x = self._cached()
        self.grads["W"] += x.T @ grad
        self.grads["b"] += grad.sum(axis=0)
        return grad @ self.params["W"].T

    def describe(self):
        return {"type": "Dense", "in": self.in_features, "out": self.out_features}


class ReLU(Layer):
    def forward(self, x, training=False):
        mask = x > 0
        self._cache = mask
        return x * mask

    def backward(self, grad):
        return grad * self._cached()


class Sigmoid(Layer):
    def forward(self, x, training=False):
        y = sigmoid(x)
        self._cache = y
        return y

    def backward(self, grad):
        y = self._cached()
        return grad * y * (1.0 - y)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


class Dropout(Layer):
    """Inverted dropout; identity outside training."""

    def __init__(self, rate=0.2, rng=None):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng if rng is not None else np.random.default_rng(0)

    def forward(self, x, training=False):
        if not training or self.rate == 0.0:
            self._cache = None if not training else 1.0
            return x
        keep = self.rng.random(x.shape) >= self.rate
        scale = keep / (1.0 - self.rate)
        self._cache = scale
        return x * scale

    def backward(self, grad):
        # Inference-mode forward is an identity, so backward is too.
        return grad if self._cache is None else grad * self._cache

    def describe(self):
        return {"type": "Dropout", "rate": self.rate}


class MaxPool1D(Layer):
    """Non-overlapping max pooling; trailing samples that do not fill a window are dropped."""

    def __init__(self, window=2):
        super().__init__()
        if window < 1:
            raise ConfigError("pool window must be >= 1")
        self.window = window

    def forward(self, x, training=False):
        b, c, length = x.shape
        if self.window > length:
            raise ShapeError(f"pool window {self.window} exceeds length {length}")
        n = length // self.window
        blocks = x[:, :, :n * self.window].reshape(b, c, n, self.window)
        arg = blocks.argmax(axis=3)  # first maximum on ties
        self._cache = (arg, x.shape)
        return np.take_along_axis(blocks, arg[..., None], axis=3)[..., 0]

    def backward(self, grad):
        arg, shape = self._cached()
        b, c, length = shape
        n = grad.shape[2]
        blocks = np.zeros((b, c, n, self.window))
        np.put_along_axis(blocks, arg[..., None], grad[..., None], axis=3)
        dx = np.zeros(shape)
        dx[:, :, :n * self.window] = blocks.reshape(b, c, n * self.window)
        return dx

    def describe(self):
        return {"type": "MaxPool1D", "window": self.window}


class Flatten(Layer):
    def forward(self, x, training=False):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._cached())


class Sequential(Layer):
    def __init__(self, layers):
        super().__init__()
        self.layers = list(layers)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad):
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def parameters(self):
        """``(layer, name)`` pairs in declaration order."""
        return [(layer, k) for layer in self.layers for k in layer.params]

    def describe(self):
        return {"type": "Sequential", "layers": [layer.describe() for layer in self.layers]}
