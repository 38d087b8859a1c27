"""Adaptive depth bins: widths/centers from logits and expected depth per pixel."""

from __future__ import annotations

from typing import Tuple

import numpy as np

from ..core import ops
from ..core.tensor import Tensor


def bins_from_logits(logits: Tensor, d_min: float, d_max: float, eps: float = 1e-3) -> Tuple[Tensor, Tensor]:
    """Map ``... x N_b`` logits to normalised widths and monotone bin centers.

    ``w_i = (relu(l_i) + eps) / sum_j (relu(l_j) + eps)`` and
    ``c_i = d_min + (d_max - d_min) * (w_i / 2 + sum_{j<i} w_j)``.
    """
    n_bins = logits.shape[-1]
    if n_bins < 2:
        raise ValueError("need at least two bins")
    pos = ops.add(ops.relu(logits), eps)
    widths = ops.div(pos, ops.sum(pos, axis=-1, keepdims=True))
    # strictly upper-triangular ones: (w @ U)_i = sum_{j<i} w_j
    upper = Tensor(np.triu(np.ones((n_bins, n_bins), dtype=logits.dtype), k=1))
    edges_before = ops.matmul(widths, upper)
    centers = ops.add(d_min, ops.mul(d_max - d_min, ops.add(ops.mul(widths, 0.5), edges_before)))
    return widths, centers


def depth_from_bins(probs: Tensor, centers: Tensor, upsample: int = 1) -> Tensor:
    """Expected depth ``sum_i P[i] c_i`` per pixel.

    ``probs`` is ``N x N_b x h x w`` (softmax over bins), ``centers`` is
    ``N x N_b``; the ``N x 1 x h x w`` result is nearest-upsampled by ``upsample``.
    """
    n, nb = centers.shape
    depth = ops.sum(ops.mul(probs, ops.reshape(centers, (n, nb, 1, 1))), axis=1, keepdims=True)
    return ops.upsample_nearest(depth, upsample) if upsample > 1 else depth
