"""Pre-norm multi-head self-attention block over token sequences."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..core import ops
from ..core.tensor import Tensor
from ..errors import ShapeError
from .layers import LayerNorm, Linear
from .module import Module


class TransformerBlock(Module):
    """``x + proj(attn(ln1(x)))`` followed by ``x + mlp(ln2(x))``.

    Tokens are ``B x N x D`` (or ``N x D``).  With ``zero_out=True`` both
    residual branches start at zero so the block is initially the identity.
    """

    def __init__(self, dim: int, heads: int = 4, mlp_ratio: int = 2,
                 rng: Optional[np.random.Generator] = None, zero_out: bool = False):
        super().__init__()
        if dim % heads:
            raise ShapeError(f"token dim {dim} not divisible by {heads} heads")
        self.dim, self.heads = dim, heads
        self.ln1 = LayerNorm(dim)
        self.q = Linear(dim, dim, rng=rng)
        self.k = Linear(dim, dim, bias=False, rng=rng)  # a key bias cancels in the softmax
        self.v = Linear(dim, dim, rng=rng)
        self.proj = Linear(dim, dim, rng=rng, zero=zero_out)
        self.ln2 = LayerNorm(dim)
        self.fc1 = Linear(dim, dim * mlp_ratio, rng=rng, std=np.sqrt(2.0 / dim))
        self.fc2 = Linear(dim * mlp_ratio, dim, rng=rng, zero=zero_out)
        self.last_attention: Optional[np.ndarray] = None

    def _split(self, t: Tensor, b: int, n: int) -> Tensor:
        dh = self.dim // self.heads
        return ops.transpose(ops.reshape(t, (b, n, self.heads, dh)), (0, 2, 1, 3))

    def attention(self, x: Tensor) -> Tensor:
        b, n, d = x.shape
        q = self._split(self.q(x), b, n)
        k = self._split(self.k(x), b, n)
        v = self._split(self.v(x), b, n)
        out = ops.attention(q, k, v, 1.0 / np.sqrt(d // self.heads))
        self.last_attention = ops.last_attention_probs()
        out = ops.reshape(ops.transpose(out, (0, 2, 1, 3)), (b, n, d))
        return self.proj(out)

    def forward(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 2
        if squeeze:
            x = ops.reshape(x, (1,) + x.shape)
        if x.ndim != 3 or x.shape[-1] != self.dim:
            raise ShapeError(f"transformer block expects token dim {self.dim}, got shape {x.shape}")
        x = ops.add(x, self.attention(self.ln1(x)))
        x = ops.add(x, self.fc2(ops.gelu(self.fc1(self.ln2(x)))))
        return ops.reshape(x, x.shape[1:]) if squeeze else x


def to_tokens(f: Tensor) -> Tensor:
    """``B x C x H x W`` map -> ``B x HW x C`` tokens."""
    b, c, h, w = f.shape
    return ops.transpose(ops.reshape(f, (b, c, h * w)), (0, 2, 1))


def from_tokens(t: Tensor, h: int, w: int) -> Tensor:
    b, n, c = t.shape
    return ops.reshape(ops.transpose(t, (0, 2, 1)), (b, c, h, w))
