"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Conv2D, LSTM, MaxPool2D, MaxPoolOverTime, ReshapeMergeFreqChannels, TimeDistributedDense
from .model import ModelGraph, bce_loss

REL_FLOOR = 1e-8


@dataclass
class GradCheckResult:
    name: str
    max_rel_error: float
    checked: int

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_rel_error < tol


def relative_error(a, b) -> np.ndarray:
    a, b = np.asarray(a), np.asarray(b)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), REL_FLOOR)


def check_model_gradients(model: ModelGraph, x, targets, h: float = 1e-4, max_per_param: int | None = None,
                          seed: int = 0) -> list[GradCheckResult]:
    """Compare backprop gradients with central differences, per parameter array.

    Runs in float64 on a copy of ``model``. ``max_per_param`` limits the number
    of randomly chosen entries checked per array (``None`` checks all).
    """
    m = model.astype(np.float64)
    x = np.asarray(x, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    m.loss_and_gradients(x, targets)
    analytic = [g.copy() for g in m.gradients()]
    rng = np.random.default_rng(seed)

    def loss():
        probs = m.forward(x)
        return bce_loss(probs if probs.ndim > 1 else probs[None],
                        targets if targets.ndim > 1 else targets[None])[0]

    results = []
    for (name, p), g in zip(m.named_parameters(), analytic):
        flat = p.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = rng.choice(flat.size, max_per_param, replace=False)
        numeric = np.empty(len(idx))
        for n, k in enumerate(idx):
            orig = flat[k]
            flat[k] = orig + h
            up = loss()
            flat[k] = orig - h
            down = loss()
            flat[k] = orig
            numeric[n] = (up - down) / (2 * h)
        err = relative_error(g.reshape(-1)[idx], numeric)
        results.append(GradCheckResult(name, float(err.max()) if err.size else 0.0, len(idx)))
    return results


def check_input_gradient(layer_model: ModelGraph, x, targets, h: float = 1e-4) -> float:
    """Max relative error of d(loss)/d(input), propagated through every layer."""
    m = layer_model.astype(np.float64)
    x = np.asarray(x, dtype=np.float64).copy()
    targets = np.asarray(targets, dtype=np.float64)
    m.zero_grads()
    probs = m.forward(x)
    _, grad = bce_loss(probs, targets)
    d = grad
    for layer in reversed(m.layers):
        d = layer.backward(d)
    numeric = np.empty(x.size)
    flat = x.reshape(-1)
    for k in range(flat.size):
        orig = flat[k]
        flat[k] = orig + h
        up = bce_loss(m.forward(x), targets)[0]
        flat[k] = orig - h
        down = bce_loss(m.forward(x), targets)[0]
        flat[k] = orig
        numeric[k] = (up - down) / (2 * h)
    return float(relative_error(d.reshape(-1), numeric).max())


def tiny_models(seed: int = 0) -> dict[str, tuple[ModelGraph, tuple]]:
    """Small float64 models isolating each layer type, plus a composed CRNN.

    Each entry maps a name to ``(model, input_shape)``; every model ends in a
    sigmoid dense layer followed by a time max-pool so a BCE loss applies.
    """
    f64 = np.float64
    models = {
        "conv2d": ModelGraph([Conv2D(2, 5), ReshapeMergeFreqChannels(), TimeDistributedDense(3),
                              MaxPoolOverTime()], (6, 5), seed, f64),
        "maxpool2d": ModelGraph([Conv2D(2, 3), MaxPool2D(2), ReshapeMergeFreqChannels(),
                                 TimeDistributedDense(3), MaxPoolOverTime()], (6, 6), seed, f64),
        "lstm": ModelGraph([LSTM(4), TimeDistributedDense(3), MaxPoolOverTime()], (5, 3), seed, f64),
        "dense": ModelGraph([TimeDistributedDense(3), MaxPoolOverTime()], (4, 3), seed, f64),
        "composed": ModelGraph([Conv2D(2, 5), MaxPool2D(2), Conv2D(2, 5), MaxPool2D(2),
                                ReshapeMergeFreqChannels(), LSTM(4), TimeDistributedDense(3),
                                MaxPoolOverTime()], (12, 8), seed, f64),
    }
    return {k: (m, m.input_shape) for k, m in models.items()}


def run_gradcheck(seed: int = 0, h: float = 1e-4, batch: int = 2) -> dict[str, list[GradCheckResult]]:
    rng = np.random.default_rng(seed)
    out = {}
    for name, (model, shape) in tiny_models(seed).items():
        x = rng.standard_normal((batch,) + shape)
        y = rng.integers(0, 2, (batch, model.n_outputs)).astype(np.float64)
        out[name] = check_model_gradients(model, x, y, h=h)
    return out
