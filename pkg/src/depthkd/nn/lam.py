"""Loss attention module: per-pixel importance scores from a mean-feature query."""

from __future__ import annotations

from typing import Optional, Tuple

import numpy as np

from ..core import ops
from ..core.tensor import Tensor
from .layers import Linear
from .module import Module


class Lam(Module):
    """Cross-attention with the spatial mean as the single query.

    Scores are softmax-normalised over pixels then multiplied by ``H*W`` so
    they average to one; the feature is gated by them and they are returned
    for weighting the distillation loss.
    """

    def __init__(self, channels: int, dim: Optional[int] = None,
                 rng: Optional[np.random.Generator] = None):
        super().__init__()
        dim = dim or channels
        self.dim = dim
        self.query = Linear(channels, dim, rng=rng)
        self.key = Linear(channels, dim, bias=False, rng=rng)

    def forward(self, f: Tensor) -> Tuple[Tensor, Tensor]:
        squeeze = f.ndim == 3
        if squeeze:
            f = ops.reshape(f, (1,) + f.shape)
        n, c, h, w = f.shape
        flat = ops.reshape(f, (n, c, h * w))
        q = self.query(ops.mean(flat, axis=-1))                        # n, d
        keys = self.key(ops.transpose(flat, (0, 2, 1)))                # n, hw, d
        scores = ops.matmul(keys, ops.reshape(q, (n, self.dim, 1)))    # n, hw, 1
        scores = ops.mul(ops.reshape(scores, (n, h * w)), 1.0 / np.sqrt(self.dim))
        a = ops.mul(ops.softmax(scores, axis=-1), float(h * w))
        a = ops.reshape(a, (n, h, w))
        weighted = ops.mul(f, ops.reshape(a, (n, 1, h, w)))
        if squeeze:
            return ops.reshape(weighted, (c, h, w)), ops.reshape(a, (h, w))
        return weighted, a
