"""AdamW with decoupled weight decay."""

from __future__ import annotations

import numpy as np

from .nn import Parameter


class AdamW:
    """Adam moments with bias correction plus decoupled weight decay.

    Parameters whose ``grad`` is ``None`` are skipped entirely (no moment
    update, no decay), matching the usual convention for parameters that
    received no gradient this step.
    """

    def __init__(self, params: list[Parameter], lr: float, betas=(0.9, 0.999),
                 eps: float = 1e-8, weight_decay: float = 0.01):
        self.params = list(params)
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            m = self.m[i]
            v = self.v[i]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            p.data = p.data * (1.0 - self.lr * self.weight_decay) - self.lr * update

    def state(self) -> dict:
        return {
            "lr": self.lr, "betas": [self.beta1, self.beta2], "eps": self.eps,
            "weight_decay": self.weight_decay, "t": self.t,
            "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v],
        }

    def load_state(self, state: dict) -> None:
        self.lr = state["lr"]
        self.beta1, self.beta2 = state["betas"]
        self.eps = state["eps"]
        self.weight_decay = state["weight_decay"]
        self.t = state["t"]
        self.m = [np.array(m, dtype=p.dtype) for m, p in zip(state["m"], self.params)]
        self.v = [np.array(v, dtype=p.dtype) for v, p in zip(state["v"], self.params)]
