"""Adam with bias correction and a linear per-step warmup schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParamSet


def lr_schedule(learning_rate: float, warmup_epochs: int, epoch: int, step_in_epoch: int,
                steps_per_epoch: int) -> float:
    """Linear ramp over the warmup steps, then constant.

    Step ``s`` (0-based, counted across epochs) during warmup gets
    ``lr * (s + 1) / (warmup_epochs * steps_per_epoch)``.
    """
    if steps_per_epoch < 1 or epoch < 0 or not 0 <= step_in_epoch < steps_per_epoch:
        raise ValueError("schedule indices out of range")
    total = warmup_epochs * steps_per_epoch
    step = epoch * steps_per_epoch + step_in_epoch
    if step >= total:
        return learning_rate
    return learning_rate * (step + 1) / total


@dataclass
class AdamState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    def __init__(self, params: ParamSet, betas=(0.9, 0.999), eps: float = 1e-8):
        if params.frozen:
            raise ValueError("cannot optimize a frozen parameter set")
        self.params = params
        self.betas = betas
        self.eps = eps
        self.state = AdamState()
        for name, p in params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def step(self, grads: dict, lr: float) -> None:
        adam_step(self.params, grads, self.state, lr, self.betas, self.eps)


def adam_step(params: ParamSet, grads: dict, state: AdamState, lr: float,
              betas=(0.9, 0.999), eps: float = 1e-8) -> None:
    """In-place Adam update; ``grads`` maps parameter tensors to arrays."""
    if params.frozen:
        raise ValueError("cannot update a frozen parameter set")
    b1, b2 = betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = grads.get(p)
        if g is None:
            g = np.zeros_like(p.data)
        m, v = state.m[name], state.v[name]
        if m.shape != p.shape:
            raise ValueError(f"optimizer state for {name} has shape {m.shape}, parameter {p.shape}")
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * g * g
        p.data = (p.data - lr * (m / c1) / (np.sqrt(v / c2) + eps)).astype(p.dtype, copy=False)
