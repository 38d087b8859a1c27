"""Adam with decoupled weight decay and the linear learning-rate schedule."""

from __future__ import annotations

from collections import OrderedDict
from typing import Mapping

import numpy as np

from ..nn.module import Parameter


def linear_lr(t: int, total: int, lr_start: float, lr_end: float) -> float:
    """Learning rate at 0-based iteration ``t`` of ``total``; hits ``lr_end`` at ``total - 1``."""
    if total <= 1:
        return lr_start
    return lr_start + (lr_end - lr_start) * (t / (total - 1))


class Adam:
    """Bias-corrected Adam; weight decay is applied to the weights, not the gradient.

    Frozen parameters and parameters without a gradient are skipped entirely,
    including their moment buffers.
    """

    def __init__(self, params: Mapping[str, Parameter], beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8, weight_decay: float = 0.0):
        self.params = OrderedDict(params)
        self.beta1, self.beta2, self.eps, self.weight_decay = beta1, beta2, eps, weight_decay
        self.m = OrderedDict((n, np.zeros_like(p.data)) for n, p in self.params.items())
        self.v = OrderedDict((n, np.zeros_like(p.data)) for n, p in self.params.items())
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for name, p in self.params.items():
            if p.frozen or p.grad is None:
                continue
            g = p.grad.astype(p.data.dtype, copy=False)
            if self.weight_decay:
                p.data -= p.data.dtype.type(lr * self.weight_decay) * p.data
            m, v = self.m[name], self.v[name]
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= p.data.dtype.type(lr) * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def state(self, prefix: str = "") -> "OrderedDict[str, np.ndarray]":
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        out[f"{prefix}t"] = np.array([self.t], dtype=np.float64)
        for n in self.params:
            out[f"{prefix}m.{n}"] = self.m[n]
            out[f"{prefix}v.{n}"] = self.v[n]
        return out

    def load(self, state: Mapping[str, np.ndarray], prefix: str = "") -> None:
        self.t = int(state[f"{prefix}t"][0])
        for n in self.params:
            np.copyto(self.m[n], state[f"{prefix}m.{n}"])
            np.copyto(self.v[n], state[f"{prefix}v.{n}"])
