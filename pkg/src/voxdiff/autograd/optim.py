from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .tensor import Tensor


@dataclass
class OptimState:
    """AdamW accumulators. ``m``/``v`` are keyed by parameter position."""

    lr: float = 1e-3
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def opt_step(params: Sequence[np.ndarray], grads: Sequence[np.ndarray | None],
             state: OptimState) -> None:
    """In-place AdamW update with bias correction and decoupled weight decay.

    A ``None`` gradient is treated as zero (the parameter still decays).
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ValueError(f"opt_step: state tracks {len(state.m)} parameters, got {len(params)}")
    for p, g in zip(params, grads):
        if g is not None and not np.all(np.isfinite(g)):
            raise FloatingPointError("non-finite gradient")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.shape:
            raise ValueError(f"opt_step: moment shape {m.shape} != parameter shape {p.shape}")
        if state.weight_decay:
            p *= 1.0 - state.lr * state.weight_decay
        if g is None:
            continue
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


class AdamW:
    """Thin wrapper binding ``opt_step`` to a list of parameter tensors."""

    def __init__(self, params: Sequence[Tensor], lr: float = 1e-3, weight_decay: float = 0.0,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = list(params)
        self.state = OptimState(lr=lr, weight_decay=weight_decay, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        opt_step([p.data for p in self.params], [p.grad for p in self.params], self.state)
