from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Parameter


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.9
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


class Adam:
    """Adam with bias correction; moments are keyed by parameter name."""

    def __init__(self, params, lr=1e-4, betas=(0.5, 0.9), eps=1e-8):
        self.params = list(params)
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise ValueError("Adam needs uniquely named parameters")
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)
        for p in self.params:
            self.state.m[p.name] = np.zeros_like(p.data)
            self.state.v[p.name] = np.zeros_like(p.data)

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        adam_step(self.params, self.state)


def adam_step(params: list[Parameter], state: AdamState, grads: dict | None = None) -> None:
    """One in-place update; parameters without a gradient count as zero-grad."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    for p in params:
        g = grads[p.name] if grads is not None else p.grad
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m[p.name]
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        upd = (state.lr / c1) * m / (np.sqrt(v / c2) + state.eps)
        p.data -= upd.astype(p.dtype, copy=False)
