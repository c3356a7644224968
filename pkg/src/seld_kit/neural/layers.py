"""Layers for the CRNN, with explicit forward/backward passes.

Activations are batch-first and channel-last: conv feature maps are
``(batch, time, freq, channels)``, sequences are ``(batch, time, features)``.
Shapes passed to ``output_shape`` exclude the batch axis.
"""

from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    def __init__(self, message: str, layer_index: int | None = None):
        super().__init__(message if layer_index is None else f"layer {layer_index}: {message}")
        self.layer_index = layer_index


def sigmoid(z):
    # split by sign to avoid overflow in exp
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def output_shape(self, shape: tuple) -> tuple:
        return shape

    def build(self, input_shape: tuple, rng: np.random.Generator, dtype=np.float32) -> tuple:
        """Allocate parameters for ``input_shape`` and return the output shape."""
        return self.output_shape(input_shape)

    def forward(self, x):
        raise NotImplementedError

    def backward(self, dout):
        raise NotImplementedError

    def zero_grads(self):
        for k, p in self.params.items():
            self.grads[k] = np.zeros_like(p)

    def config(self) -> dict:
        return {"type": self.kind}

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())


class Conv2D(Layer):
    """k x k convolution, stride 1, same padding, optional ReLU."""

    kind = "conv2d"

    def __init__(self, filters: int, kernel: int = 5, activation: str | None = "relu"):
        super().__init__()
        if kernel % 2 != 1:
            raise ValueError("same padding needs an odd kernel size")
        self.filters = filters
        self.kernel = kernel
        self.activation = activation

    def output_shape(self, shape):
        if len(shape) not in (2, 3):
            raise ShapeError(f"conv2d expects (time, freq[, channels]), got {shape}")
        return (shape[0], shape[1], self.filters)

    def build(self, input_shape, rng, dtype=np.float32):
        out = self.output_shape(input_shape)
        c_in = input_shape[2] if len(input_shape) == 3 else 1
        fan_in = self.kernel * self.kernel * c_in
        limit = np.sqrt(6.0 / fan_in)
        self.params = {
            "W": rng.uniform(-limit, limit, (self.kernel, self.kernel, c_in, self.filters)).astype(dtype),
            "b": np.zeros(self.filters, dtype=dtype),
        }
        self.zero_grads()
        return out

    def forward(self, x):
        squeeze = x.ndim == 3
        if squeeze:
            x = x[..., None]
        W, b = self.params["W"], self.params["b"]
        if x.shape[-1] != W.shape[2]:
            raise ShapeError(f"conv2d expects {W.shape[2]} input channels, got {x.shape[-1]}")
        k, p = self.kernel, self.kernel // 2
        B, T, F, _ = x.shape
        xp = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
        z = np.broadcast_to(b, (B, T, F, self.filters)).copy()
        for i in range(k):
            for j in range(k):
                z += xp[:, i:i + T, j:j + F, :] @ W[i, j]
        out = np.maximum(z, 0) if self.activation == "relu" else z
        self._cache = (xp, z, squeeze)
        return out

    def backward(self, dout):
        xp, z, squeeze = self._cache
        W = self.params["W"]
        k, p = self.kernel, self.kernel // 2
        B, T, F, _ = dout.shape
        dz = dout * (z > 0) if self.activation == "relu" else dout
        c_in = W.shape[2]
        dz2 = dz.reshape(-1, self.filters)
        self.grads["b"] += dz2.sum(axis=0)
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                win = xp[:, i:i + T, j:j + F, :]
                self.grads["W"][i, j] += win.reshape(-1, c_in).T @ dz2
                dxp[:, i:i + T, j:j + F, :] += dz @ W[i, j].T
        dx = dxp[:, p:p + T, p:p + F, :]
        return dx[..., 0] if squeeze else dx

    def config(self):
        return {"type": self.kind, "filters": self.filters, "kernel": self.kernel, "activation": self.activation}


class MaxPool2D(Layer):
    """Non-overlapping max-pooling over (time, freq); odd remainders are dropped."""

    kind = "maxpool2d"

    def __init__(self, pool: int = 2):
        super().__init__()
        self.pool = pool

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ShapeError(f"maxpool2d expects (time, freq, channels), got {shape}")
        t, f = shape[0] // self.pool, shape[1] // self.pool
        if t == 0 or f == 0:
            raise ShapeError(f"maxpool2d would empty input of shape {shape}")
        return (t, f, shape[2])

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"maxpool2d expects 4-D input, got {x.ndim}-D")
        q = self.pool
        B, T, F, C = x.shape
        T2, F2 = T // q, F // q
        win = x[:, :T2 * q, :F2 * q, :].reshape(B, T2, q, F2, q, C).transpose(0, 1, 3, 5, 2, 4)
        win = win.reshape(B, T2, F2, C, q * q)
        idx = np.argmax(win, axis=-1)
        self._cache = (x.shape, idx)
        return np.take_along_axis(win, idx[..., None], axis=-1)[..., 0]

    def backward(self, dout):
        shape, idx = self._cache
        q = self.pool
        B, T, F, C = shape
        T2, F2 = T // q, F // q
        dwin = np.zeros((B, T2, F2, C, q * q), dtype=dout.dtype)
        np.put_along_axis(dwin, idx[..., None], dout[..., None], axis=-1)
        dwin = dwin.reshape(B, T2, F2, C, q, q).transpose(0, 1, 4, 2, 5, 3).reshape(B, T2 * q, F2 * q, C)
        dx = np.zeros(shape, dtype=dout.dtype)
        dx[:, :T2 * q, :F2 * q, :] = dwin
        return dx

    def config(self):
        return {"type": self.kind, "pool": self.pool}


class ReshapeMergeFreqChannels(Layer):
    """(time, freq, channels) -> (time, freq * channels)."""

    kind = "reshape"

    def output_shape(self, shape):
        if len(shape) != 3:
            raise ShapeError(f"reshape expects (time, freq, channels), got {shape}")
        return (shape[0], shape[1] * shape[2])

    def forward(self, x):
        if x.ndim != 4:
            raise ShapeError(f"reshape expects 4-D input, got {x.ndim}-D")
        self._cache = x.shape
        return x.reshape(x.shape[0], x.shape[1], -1)

    def backward(self, dout):
        return dout.reshape(self._cache)


class LSTM(Layer):
    """Single-direction LSTM returning the full hidden sequence. Gate order: i, f, g, o."""

    kind = "lstm"

    def __init__(self, units: int):
        super().__init__()
        self.units = units

    def output_shape(self, shape):
        if len(shape) != 2:
            raise ShapeError(f"lstm expects (time, features), got {shape}")
        return (shape[0], self.units)

    def build(self, input_shape, rng, dtype=np.float32):
        out = self.output_shape(input_shape)
        d, h = input_shape[1], self.units
        limit = 1.0 / np.sqrt(h)
        b = np.zeros(4 * h)
        b[h:2 * h] = 1.0  # forget gate
        self.params = {
            "W": rng.uniform(-limit, limit, (d, 4 * h)).astype(dtype),
            "U": rng.uniform(-limit, limit, (h, 4 * h)).astype(dtype),
            "b": b.astype(dtype),
        }
        self.zero_grads()
        return out

    def forward(self, x):
        W, U, b = self.params["W"], self.params["U"], self.params["b"]
        if x.ndim != 3 or x.shape[-1] != W.shape[0]:
            raise ShapeError(f"lstm expects (batch, time, {W.shape[0]}), got {x.shape}")
        B, T, _ = x.shape
        H = self.units
        xw = x @ W + b
        h = np.zeros((B, H), dtype=x.dtype)
        c = np.zeros((B, H), dtype=x.dtype)
        hs = np.empty((B, T, H), dtype=x.dtype)
        cs = np.empty((B, T, H), dtype=x.dtype)
        gates = np.empty((B, T, 4 * H), dtype=x.dtype)
        for t in range(T):
            a = xw[:, t] + h @ U
            g = np.empty_like(a)
            g[:, :2 * H] = sigmoid(a[:, :2 * H])
            g[:, 2 * H:3 * H] = np.tanh(a[:, 2 * H:3 * H])
            g[:, 3 * H:] = sigmoid(a[:, 3 * H:])
            c = g[:, H:2 * H] * c + g[:, :H] * g[:, 2 * H:3 * H]
            h = g[:, 3 * H:] * np.tanh(c)
            gates[:, t], cs[:, t], hs[:, t] = g, c, h
        self._cache = (x, hs, cs, gates)
        return hs

    def backward(self, dout):
        x, hs, cs, gates = self._cache
        W, U = self.params["W"], self.params["U"]
        B, T, _ = x.shape
        H = self.units
        da = np.empty_like(gates)
        dh_next = np.zeros((B, H), dtype=dout.dtype)
        dc_next = np.zeros((B, H), dtype=dout.dtype)
        for t in reversed(range(T)):
            g = gates[:, t]
            i, f, gg, o = g[:, :H], g[:, H:2 * H], g[:, 2 * H:3 * H], g[:, 3 * H:]
            tc = np.tanh(cs[:, t])
            c_prev = cs[:, t - 1] if t > 0 else np.zeros_like(tc)
            dh = dout[:, t] + dh_next
            dc = dc_next + dh * o * (1 - tc * tc)
            da[:, t, :H] = dc * gg * i * (1 - i)
            da[:, t, H:2 * H] = dc * c_prev * f * (1 - f)
            da[:, t, 2 * H:3 * H] = dc * i * (1 - gg * gg)
            da[:, t, 3 * H:] = dh * tc * o * (1 - o)
            dh_next = da[:, t] @ U.T
            dc_next = dc * f
        h_prev = np.concatenate([np.zeros((B, 1, H), dtype=hs.dtype), hs[:, :-1]], axis=1)
        self.grads["W"] += x.reshape(B * T, -1).T @ da.reshape(B * T, -1)
        self.grads["U"] += h_prev.reshape(B * T, -1).T @ da.reshape(B * T, -1)
        self.grads["b"] += da.sum(axis=(0, 1))
        return da @ W.T

    def config(self):
        return {"type": self.kind, "units": self.units}


class TimeDistributedDense(Layer):
    """Dense layer with shared weights applied at every time step."""

    kind = "dense"

    def __init__(self, units: int, activation: str | None = "sigmoid"):
        super().__init__()
        self.units = units
        self.activation = activation

    def output_shape(self, shape):
        if len(shape) != 2:
            raise ShapeError(f"dense expects (time, features), got {shape}")
        return (shape[0], self.units)

    def build(self, input_shape, rng, dtype=np.float32):
        out = self.output_shape(input_shape)
        d = input_shape[1]
        limit = np.sqrt(3.0 / d)
        self.params = {
            "W": rng.uniform(-limit, limit, (d, self.units)).astype(dtype),
            "b": np.zeros(self.units, dtype=dtype),
        }
        self.zero_grads()
        return out

    def forward(self, x):
        W, b = self.params["W"], self.params["b"]
        if x.ndim != 3 or x.shape[-1] != W.shape[0]:
            raise ShapeError(f"dense expects (batch, time, {W.shape[0]}), got {x.shape}")
        z = x @ W + b
        y = sigmoid(z) if self.activation == "sigmoid" else z
        self._cache = (x, y)
        return y

    def backward(self, dout):
        x, y = self._cache
        dz = dout * y * (1 - y) if self.activation == "sigmoid" else dout
        B, T, D = x.shape
        self.grads["W"] += x.reshape(B * T, D).T @ dz.reshape(B * T, -1)
        self.grads["b"] += dz.sum(axis=(0, 1))
        return dz @ self.params["W"].T

    def config(self):
        return {"type": self.kind, "units": self.units, "activation": self.activation}


class MaxPoolOverTime(Layer):
    """(time, labels) -> (labels,); the gradient goes to the argmax step only."""

    kind = "timepool"

    def output_shape(self, shape):
        if len(shape) != 2:
            raise ShapeError(f"timepool expects (time, labels), got {shape}")
        return (shape[1],)

    def forward(self, x):
        if x.ndim != 3:
            raise ShapeError(f"timepool expects 3-D input, got {x.ndim}-D")
        idx = np.argmax(x, axis=1)
        self._cache = (x.shape, idx)
        return np.take_along_axis(x, idx[:, None, :], axis=1)[:, 0, :]

    def backward(self, dout):
        shape, idx = self._cache
        dx = np.zeros(shape, dtype=dout.dtype)
        np.put_along_axis(dx, idx[:, None, :], dout[:, None, :], axis=1)
        return dx


LAYER_TYPES = {cls.kind: cls for cls in (Conv2D, MaxPool2D, ReshapeMergeFreqChannels, LSTM,
                                         TimeDistributedDense, MaxPoolOverTime)}


def layer_from_config(cfg: dict) -> Layer:
    cfg = dict(cfg)
    kind = cfg.pop("type")
    if kind not in LAYER_TYPES:
        raise ValueError(f"unknown layer type {kind!r}")
    return LAYER_TYPES[kind](**cfg)
