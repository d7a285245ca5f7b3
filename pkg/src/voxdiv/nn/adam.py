"""Adam with bias correction."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import Tensor


@dataclass
class AdamState:
    learning_rate: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def ensure(self, params: list[Tensor]) -> None:
        if not self.m:
            self.m = [np.zeros_like(p.values) for p in params]
            self.v = [np.zeros_like(p.values) for p in params]


def adam_step(params: list[Tensor], grads: list[np.ndarray], state: AdamState) -> None:
    """One in-place Adam update of ``params`` from ``grads``."""
    state.ensure(params)
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p.values -= state.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


class Adam:
    """Stateful wrapper reading gradients straight from the parameters."""

    def __init__(self, params: list[Tensor], learning_rate: float = 1e-4):
        self.params = params
        self.state = AdamState(learning_rate=learning_rate)

    def step(self) -> None:
        adam_step(self.params, [p.grad for p in self.params], self.state)

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()
