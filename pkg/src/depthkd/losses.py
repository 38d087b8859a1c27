"""Task, distillation and combined training objectives."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .core import ops
from .core.tensor import Tensor
from .errors import DomainError, ShapeError


@dataclass
class LossConfig:
    alpha: float = 10.0        # SILog scale
    beta: float = 0.85         # variance focus
    lambda_kd: float = 0.05
    depth_eps: float = 1e-3    # clamp before logs

    def __post_init__(self):
        if not 0.0 <= self.beta <= 1.0:
            raise ValueError(f"beta must lie in [0, 1], got {self.beta}")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.lambda_kd < 0:
            raise ValueError("lambda_kd must be non-negative")


def silog(pred: Tensor, gt, mask=None, alpha: float = 10.0, beta: float = 0.85) -> Tensor:
    """Scaled scale-invariant log loss over the masked pixels.

    ``alpha * sqrt(mean(g^2) - beta * mean(g)^2)`` with ``g = log pred - log gt``.
    Depths must already be positive on the mask (clamp predictions first).
    """
    gt = gt.data if isinstance(gt, Tensor) else np.asarray(gt)
    mask = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    if pred.shape != gt.shape or mask.shape != gt.shape:
        raise ShapeError(f"silog: pred {pred.shape}, gt {gt.shape}, mask {mask.shape} differ")
    n = int(mask.sum())
    if n == 0:
        raise ValueError("silog: empty mask")
    if np.any(gt[mask] <= 0):
        raise DomainError("silog: non-positive ground-truth depth on mask")
    g = ops.sub(ops.log(ops.getitem(pred, mask)), np.log(gt[mask]).astype(pred.dtype))
    mean_sq = ops.mul(ops.sum_sq(g), 1.0 / n)
    mean_g = ops.mul(ops.sum(g), 1.0 / n)
    radicand = ops.sub(mean_sq, ops.mul(ops.mul(mean_g, mean_g), beta))
    # equals var(g) + (1 - beta) mean(g)^2 >= 0; only round-off can push it below
    r = float(radicand.data)
    if r < -1e-9 * max(float(mean_sq.data), 1.0):
        raise DomainError(f"silog: negative radicand {r}")
    if r <= 0.0:
        # g is constant with beta == 1 (or zero): loss and its subgradient vanish
        return ops.mul(radicand, 0.0)
    return ops.mul(ops.sqrt(radicand), alpha)


def attentive_kd(student: Sequence[Tensor], teacher: Sequence[Tensor],
                 scores: Sequence[Optional[Tensor]]) -> Tensor:
    """Score-weighted squared feature difference summed over stages.

    Each stage contributes ``||A_l (F_s - F_t)||^2`` with ``A_l`` (``N x h x w``)
    broadcast over channels; ``None`` means all-ones scores.  The total is
    divided by the number of feature elements so the weight does not depend
    on resolution.
    """
    total = None
    count = 0
    for l, (fs, ft, a) in enumerate(zip(student, teacher, scores, strict=True)):
        if fs.shape != ft.shape:
            raise ShapeError(f"attentive_kd: stage {l + 1} student {fs.shape} vs teacher {ft.shape}")
        diff = ops.sub(fs, ft)
        if a is not None:
            if a.shape != fs.shape[:1] + fs.shape[2:] and a.shape != fs.shape[-2:]:
                raise ShapeError(f"attentive_kd: stage {l + 1} scores {a.shape} do not match {fs.shape}")
            a4 = ops.reshape(a, fs.shape[:1] + (1,) + fs.shape[2:]) if fs.ndim == 4 else ops.reshape(a, (1,) + a.shape)
            diff = ops.mul(diff, a4)
        term = ops.sum_sq(diff)
        total = term if total is None else ops.add(total, term)
        count += fs.size
    return ops.mul(total, 1.0 / count)


class Objectives(NamedTuple):
    student: Tensor
    acclimation: Optional[Tensor]
    task: Tensor
    kd: Optional[Tensor]


def total_loss(student_pred: Tensor, teacher_pred: Optional[Tensor], gt, mask, kd_term: Optional[Tensor],
               warmup_active: bool, cfg: LossConfig = LossConfig()) -> Objectives:
    """Student objective ``SILog + lambda * KD`` (KD gated off in warmup) and the
    separate acclimation objective ``SILog`` of the ghost-decoder prediction."""
    task = silog(student_pred, gt, mask, cfg.alpha, cfg.beta)
    student = task
    if kd_term is not None and not warmup_active and cfg.lambda_kd > 0:
        student = ops.add(task, ops.mul(kd_term, cfg.lambda_kd))
    acclimation = silog(teacher_pred, gt, mask, cfg.alpha, cfg.beta) if teacher_pred is not None else None
    return Objectives(student, acclimation, task, kd_term)
