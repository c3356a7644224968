"""Adam and Adamax updates over lists of numpy parameter arrays (updated in place)."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass
class OptimState:
    kind: str = "adam"  # "adam" | "adamax"
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    clip_norm: float = math.inf
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)  # second moment (Adam) or infinity norm u (Adamax)

    def hyper(self) -> dict:
        return {"kind": self.kind, "lr": self.lr, "beta1": self.beta1, "beta2": self.beta2,
                "eps": self.eps, "clip_norm": None if math.isinf(self.clip_norm) else self.clip_norm,
                "t": self.t}

    def ensure_slots(self, params):
        if not self.m:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
        if len(self.m) != len(params):
            raise ValueError(f"optimizer holds {len(self.m)} slots for {len(params)} parameters")


def _clipped(grads, clip_norm):
    if math.isinf(clip_norm):
        return grads
    norm = math.sqrt(sum(float(np.sum(np.square(g, dtype=np.float64))) for g in grads))
    if norm <= clip_norm or norm == 0.0:
        return grads
    return [g * (clip_norm / norm) for g in grads]


def adam_step(params, grads, state: OptimState):
    """One Adam update with bias-corrected moments."""
    state.ensure_slots(params)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, _clipped(grads, state.clip_norm), state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * (g * g)
        p -= (state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)).astype(p.dtype)
    return params, state


def adamax_step(params, grads, state: OptimState):
    """One Adamax update: infinity-norm second moment, bias correction on m only."""
    state.ensure_slots(params)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    step = state.lr / (1.0 - b1 ** state.t)
    for p, g, m, u in zip(params, _clipped(grads, state.clip_norm), state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1 - b1) * g
        np.maximum(b2 * u, np.abs(g), out=u)
        p -= (step * m / (u + state.eps)).astype(p.dtype)
    return params, state


STEP_FUNCTIONS = {"adam": adam_step, "adamax": adamax_step}


class Optimizer:
    """Thin stateful wrapper: ``Optimizer("adamax", lr=2e-3).step(params, grads)``."""

    def __init__(self, kind: str = "adam", **hyper):
        if kind not in STEP_FUNCTIONS:
            raise ValueError(f"unknown optimizer {kind!r}; choose from {sorted(STEP_FUNCTIONS)}")
        self.state = OptimState(kind=kind, **hyper)

    def step(self, params, grads):
        STEP_FUNCTIONS[self.state.kind](params, grads, self.state)
