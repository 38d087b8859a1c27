"""Local-global convolution.

A 3x3 convolution keeps its weights untouched as the local branch; a global
branch pools information over the whole image with per-head spatial
attention and broadcasts it back to every output pixel through a learned
sigmoid gate.  The branch ends in a batch norm whose scale starts at a small
``gamma0`` so wrapping a trained network barely moves its outputs.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..core import ops
from ..core.tensor import Tensor
from .layers import BatchNorm2d, Conv2d, ConvBnRelu, Linear
from .module import Module

DEFAULT_GAMMA0 = 1e-3


class LgConv(Module):
    def __init__(self, local: Conv2d, heads: int = 4, gamma0: float = DEFAULT_GAMMA0,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        c_in, c_out, s = local.c_in, local.c_out, local.stride
        if (2 * c_out) % heads:
            raise ValueError(f"hidden width {2 * c_out} not divisible by {heads} heads")
        self.heads = heads
        self.local = local
        self.transform = Conv2d(c_in, c_out, 1, stride=s, padding=0, rng=rng)
        self.attn = Conv2d(2 * c_out, heads, 1, padding=0, bias=False, rng=rng, init_scale=0.5)
        self.gate = Conv2d(2 * c_out, 1, 1, padding=0, rng=rng, init_scale=0.5)
        self.proj = Linear(2 * c_out, c_out, rng=rng)
        self.bn = BatchNorm2d(c_out, gamma_init=gamma0)
        self.last_attention: Optional[np.ndarray] = None

    @property
    def c_in(self) -> int:
        return self.local.c_in

    @property
    def c_out(self) -> int:
        return self.local.c_out

    @property
    def stride(self) -> int:
        return self.local.stride

    def global_branch(self, x: Tensor) -> Tensor:
        t = ops.relu(self.transform(x))
        n, c, h, w = t.shape
        pooled = ops.broadcast_to(ops.avgpool_global(t), t.shape)
        hidden = ops.concat([t, pooled], axis=1)                       # n, 2c, h, w
        logits = ops.reshape(self.attn(hidden), (n, self.heads, h * w))
        attention = ops.softmax(logits, axis=-1)                      # per head, over pixels
        self.last_attention = attention.data
        values = ops.reshape(hidden, (n, self.heads, 2 * c // self.heads, h * w))
        pooled_heads = ops.matmul(values, ops.reshape(attention, (n, self.heads, h * w, 1)))
        vector = self.proj(ops.reshape(pooled_heads, (n, 2 * c)))    # n, c
        gate = ops.sigmoid(self.gate(hidden))                         # n, 1, h, w
        branch = ops.mul(gate, ops.reshape(vector, (n, c, 1, 1)))
        return self.bn(branch)

    def forward(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 3
        if squeeze:
            x = ops.reshape(x, (1,) + x.shape)
        out = ops.add(self.local(x), self.global_branch(x))
        return ops.reshape(out, out.shape[1:]) if squeeze else out


def wrap_backbone_with_lgconv(backbone: Module, gamma0: float = DEFAULT_GAMMA0, heads: int = 4,
                              rng: Optional[np.random.Generator] = None) -> Module:
    """Replace the 3x3 conv of every :class:`ConvBnRelu` in ``backbone`` with an LgConv.

    The local weights are reused verbatim (same Parameter objects).  Operates
    in place and returns ``backbone`` for chaining.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for _, m in list(backbone.named_modules()):
        if isinstance(m, ConvBnRelu) and isinstance(m.conv, Conv2d) and m.conv.k == 3:
            m.conv = LgConv(m.conv, heads=heads, gamma0=gamma0, rng=rng)
    return backbone
