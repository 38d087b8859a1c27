"""Basic layers: convolution, batch/layer norm, linear."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..core import ops
from ..core.tensor import Tensor, get_default_dtype
from .module import Module, Parameter


def _rng(rng: Optional[np.random.Generator]) -> np.random.Generator:
    return rng if rng is not None else np.random.default_rng(0)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int = 3, stride: int = 1,
                 padding: Optional[int] = None, bias: bool = True,
                 rng: Optional[np.random.Generator] = None, init_scale: float = 1.0):
        super().__init__()
        self.c_in, self.c_out, self.k, self.stride = c_in, c_out, k, stride
        self.padding = (k - 1) // 2 if padding is None else padding
        std = init_scale * np.sqrt(2.0 / (c_in * k * k))
        self.w = Parameter(_rng(rng).normal(0.0, std, (c_out, c_in, k, k)))
        self.b = Parameter(np.zeros(c_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        return ops.conv2d(x, self.w, self.b, stride=self.stride, padding=self.padding)

    def output_size(self, h: int, w: int):
        return ((h + 2 * self.padding - self.k) // self.stride + 1,
                (w + 2 * self.padding - self.k) // self.stride + 1)


class BatchNorm2d(Module):
    def __init__(self, c: int, momentum: float = 0.1, eps: float = 1e-5, gamma_init: float = 1.0):
        super().__init__()
        if eps <= 0:
            raise ValueError("BatchNorm eps must be positive")
        self.momentum, self.eps = momentum, eps
        self.gamma = Parameter(np.full(c, gamma_init))
        self.beta = Parameter(np.zeros(c))
        dtype = get_default_dtype()
        self.register_buffer("running_mean", np.zeros(c, dtype=dtype))
        self.register_buffer("running_var", np.ones(c, dtype=dtype))

    def forward(self, x: Tensor) -> Tensor:
        return ops.batch_norm(x, self.gamma, self.beta, self.running_mean, self.running_var,
                              training=self.training, momentum=self.momentum, eps=self.eps)


class ConvBnRelu(Module):
    """3x3 conv (no bias) -> batch norm -> optional ReLU.

    ``conv`` may later be swapped for an :class:`~depthkd.nn.lgconv.LgConv`
    wrapping the same local weights.
    """

    def __init__(self, c_in: int, c_out: int, stride: int = 1, act: bool = True,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        self.conv = Conv2d(c_in, c_out, 3, stride=stride, bias=False, rng=rng)
        self.bn = BatchNorm2d(c_out)
        self.act = act

    def forward(self, x: Tensor) -> Tensor:
        y = self.bn(self.conv(x))
        return ops.relu(y) if self.act else y


class Linear(Module):
    def __init__(self, d_in: int, d_out: int, bias: bool = True,
                 rng: Optional[np.random.Generator] = None, zero: bool = False,
                 std: Optional[float] = None):
        super().__init__()
        if zero:
            w = np.zeros((d_in, d_out))
        else:
            w = _rng(rng).normal(0.0, std if std is not None else np.sqrt(1.0 / d_in), (d_in, d_out))
        self.w = Parameter(w)
        self.b = Parameter(np.zeros(d_out)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        y = ops.matmul(x, self.w)
        return ops.add(y, self.b) if self.b is not None else y


class LayerNorm(Module):
    def __init__(self, d: int, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gamma = Parameter(np.ones(d))
        self.beta = Parameter(np.zeros(d))

    def forward(self, x: Tensor) -> Tensor:
        return ops.layer_norm(x, self.gamma, self.beta, self.eps)
