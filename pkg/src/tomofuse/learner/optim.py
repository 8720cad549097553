"""Adam with classic L2 regularization (``weight_decay * theta`` added to the gradient)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeMismatch


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> dict:
    """Update ``params`` in place and advance ``state``; returns ``params``."""
    if set(grads) - set(params):
        raise ShapeMismatch(f"gradients for unknown parameters: {sorted(set(grads) - set(params))}")
    for name, g in grads.items():
        if g.shape != params[name].shape:
            raise ShapeMismatch(f"{name}: gradient shape {g.shape} != parameter shape {params[name].shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**state.step
    corr2 = 1.0 - b2**state.step
    for name, g in grads.items():
        theta = params[name]
        if state.weight_decay:
            g = g + state.weight_decay * theta
        if name not in state.m:
            state.m[name] = np.zeros_like(theta)
            state.v[name] = np.zeros_like(theta)
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        theta -= state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
    return params
