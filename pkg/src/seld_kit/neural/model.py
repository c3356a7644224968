"""Sequential layer stack with binary cross-entropy training support."""

from __future__ import annotations

import copy
from dataclasses import dataclass

import numpy as np

from .layers import Layer, ShapeError, layer_from_config

PROB_CLAMP = 1e-7
THRESHOLD = 0.5


def crnn_architecture(conv_filters=(64, 96), lstm_units=(64,), n_labels=2, kernel=5) -> list[dict]:
    """Conv(+ReLU)-Pool blocks, frequency/channel merge, LSTM(s), sigmoid dense, time max-pool."""
    arch = []
    for f in conv_filters:
        arch += [{"type": "conv2d", "filters": int(f), "kernel": kernel, "activation": "relu"},
                 {"type": "maxpool2d", "pool": 2}]
    if conv_filters:
        arch.append({"type": "reshape"})
    arch += [{"type": "lstm", "units": int(u)} for u in lstm_units]
    arch += [{"type": "dense", "units": int(n_labels), "activation": "sigmoid"}, {"type": "timepool"}]
    return arch


STAGE1_ARCH = crnn_architecture((64, 96), (64,), 2)
STAGE2_ARCH = crnn_architecture((32, 48), (48,), 2)
FLAT_ARCH = crnn_architecture((64, 96), (64,), 3)


@dataclass
class LossReport:
    loss: float
    probabilities: np.ndarray
    predictions: np.ndarray


def bce_loss(probabilities, targets) -> tuple[float, np.ndarray]:
    """Mean binary cross-entropy and its gradient w.r.t. the probabilities.

    Probabilities are clamped to ``[1e-7, 1 - 1e-7]``; the returned gradient is
    evaluated at the clamped values. Averaged over labels and batch rows.
    """
    p = np.clip(np.asarray(probabilities, dtype=np.float64), PROB_CLAMP, 1 - PROB_CLAMP)
    y = np.asarray(targets, dtype=np.float64)
    if p.shape != y.shape:
        raise ValueError(f"probabilities {p.shape} and targets {y.shape} differ in shape")
    loss = -np.mean(y * np.log(p) + (1 - y) * np.log(1 - p))
    grad = (p - y) / (p * (1 - p)) / y.size
    return float(loss), grad


def binarize(probabilities, threshold: float = THRESHOLD) -> np.ndarray:
    """Probability >= threshold counts as positive."""
    return (np.asarray(probabilities) >= threshold).astype(np.int8)


class ModelGraph:
    def __init__(self, layers: list[Layer], input_shape: tuple, seed: int = 0, dtype=np.float32):
        self.layers = layers
        self.input_shape = tuple(int(d) for d in input_shape)
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(self.seed)
        shape = self.input_shape
        self.shapes = [shape]
        for i, layer in enumerate(layers):
            try:
                shape = layer.build(shape, rng, self.dtype)
            except ShapeError as err:
                raise ShapeError(str(err), i) from None
            self.shapes.append(shape)
        if len(shape) != 1:
            raise ShapeError(f"model must end in a per-label vector, ends in {shape}", len(layers) - 1)

    @classmethod
    def from_architecture(cls, arch: list[dict], input_shape, seed: int = 0, dtype=np.float32) -> "ModelGraph":
        return cls([layer_from_config(c) for c in arch], input_shape, seed, dtype)

    @property
    def architecture(self) -> list[dict]:
        return [layer.config() for layer in self.layers]

    @property
    def n_outputs(self) -> int:
        return self.shapes[-1][0]

    def parameters(self) -> list[np.ndarray]:
        return [layer.params[k] for layer in self.layers for k in sorted(layer.params)]

    def gradients(self) -> list[np.ndarray]:
        return [layer.grads[k] for layer in self.layers for k in sorted(layer.params)]

    def named_parameters(self):
        for i, layer in enumerate(self.layers):
            for k in sorted(layer.params):
                yield f"{i}.{layer.kind}.{k}", layer.params[k]

    def count_parameters(self) -> int:
        return sum(layer.num_params() for layer in self.layers)

    def zero_grads(self):
        for layer in self.layers:
            layer.zero_grads()

    def astype(self, dtype) -> "ModelGraph":
        clone = copy.deepcopy(self)
        clone.dtype = np.dtype(dtype)
        for layer in clone.layers:
            layer.params = {k: v.astype(dtype) for k, v in layer.params.items()}
            layer.zero_grads()
            layer._cache = None
        return clone

    def copy(self) -> "ModelGraph":
        return self.astype(self.dtype)

    def set_parameters(self, arrays):
        params = self.parameters()
        if len(arrays) != len(params):
            raise ValueError(f"expected {len(params)} arrays, got {len(arrays)}")
        for p, a in zip(params, arrays):
            if p.shape != np.shape(a):
                raise ShapeError(f"parameter shape {np.shape(a)} != {p.shape}")
            p[...] = a

    def forward(self, x) -> np.ndarray:
        """Block-level label probabilities, shape ``(batch, labels)``.

        Accepts a single example ``(time, bands)`` or a batch ``(batch, time, bands)``.
        """
        x = np.asarray(x, dtype=self.dtype)
        single = x.ndim == len(self.input_shape)
        if single:
            x = x[None]
        if tuple(x.shape[1:]) != self.input_shape:
            raise ShapeError(f"input shape {tuple(x.shape[1:])} != declared {self.input_shape}", 0)
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x)
            except ShapeError as err:
                raise ShapeError(str(err), i) from None
        return x[0] if single else x

    def backward(self, dprobs) -> None:
        """Accumulate parameter gradients given d(loss)/d(probabilities)."""
        d = np.asarray(dprobs, dtype=self.dtype)
        for layer in reversed(self.layers):
            d = layer.backward(d)

    def loss_and_gradients(self, x, targets) -> LossReport:
        self.zero_grads()
        probs = self.forward(x)
        squeeze = probs.ndim == 1
        if squeeze:
            probs = probs[None]
            targets = np.asarray(targets)[None]
        loss, grad = bce_loss(probs, targets)
        self.backward(grad)
        out = probs[0] if squeeze else probs
        return LossReport(loss, out, binarize(out))

    def predict_proba(self, x, batch_size: int = 64) -> np.ndarray:
        x = np.asarray(x)
        if len(x) == 0:
            return np.zeros((0, self.n_outputs), dtype=self.dtype)
        return np.concatenate([self.forward(x[i:i + batch_size]) for i in range(0, len(x), batch_size)])

    def summary(self) -> str:
        lines = [f"input {self.input_shape}"]
        for layer, shape in zip(self.layers, self.shapes[1:]):
            lines.append(f"{layer.kind:<10} -> {str(shape):<16} params {layer.num_params()}")
        lines.append(f"total learnable parameters: {self.count_parameters()}")
        return "\n".join(lines)


def count_parameters(model: ModelGraph) -> int:
    return model.count_parameters()


def forward(model: ModelGraph, x) -> np.ndarray:
    return model.forward(x)


def backward(model: ModelGraph, x, targets) -> list[np.ndarray]:
    """Run forward + backward on ``(x, targets)`` and return copies of every gradient."""
    model.loss_and_gradients(x, targets)
    return [g.copy() for g in model.gradients()]
