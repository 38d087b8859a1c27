"""Frozen teacher encoder wrapped with feature acclimation, loss attention and a ghost decoder."""

from __future__ import annotations

from typing import List, NamedTuple, Optional, Sequence

import numpy as np

from ..core import ops
from ..core.tensor import Tensor, no_grad
from ..errors import ProtocolError
from ..nn import Conv2d, Lam, Module, TransformerBlock
from ..nn.attention import from_tokens, to_tokens
from .config import ModelConfig
from .networks import BinPrediction, DepthDecoder, TeacherModel


class Adapter(Module):
    """1x1 conv from teacher to student channel width, then nearest resize.

    Initialised as channel-group averaging when the widths divide evenly, so
    an untrained adapter is a fixed, parameter-free-looking projection.
    """

    def __init__(self, c_t: int, c_s: int, rng=None):
        super().__init__()
        self.conv = Conv2d(c_t, c_s, 1, padding=0, rng=rng)
        if c_t % c_s == 0:
            r = c_t // c_s
            w = np.zeros((c_s, c_t, 1, 1), dtype=self.conv.w.dtype)
            for o in range(c_s):
                w[o, o * r:(o + 1) * r] = 1.0 / r
            self.conv.w.data[...] = w

    def forward(self, f: Tensor, size) -> Tensor:
        return ops.resize_nearest(self.conv(f), size)


class AcclimatedOutput(NamedTuple):
    features: List[Tensor]          # adapted teacher features (KD targets), student shapes
    scores: List[Optional[Tensor]]  # LAM score maps N x h x w, or None with LAM off
    pred: Optional[BinPrediction]   # ghost-decoder prediction (None when nothing is trainable)


class AcclimatedTeacher(Module):
    """Per stage: teacher feature -> FAM -> adapter -> LAM, decoded by the ghost decoder.

    Only FAM, LAM and adapter parameters are trainable.  With ``fam=False``
    and ``lam=False`` the adapters stay at their averaging init and no
    acclimation objective exists.
    """

    def __init__(self, teacher: TeacherModel, cfg: ModelConfig, fam: bool = True,
                 lam: bool = True, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.cfg = cfg
        self.use_fam, self.use_lam = fam, lam
        self.encoder = teacher.enc
        self.encoder.freeze()
        self.encoder.eval()
        self.fams = [TransformerBlock(c, heads=cfg.fam_heads(c), mlp_ratio=cfg.fam_mlp_ratio, rng=rng, zero_out=True)
                     for c in cfg.teacher_widths] if fam else []
        self.adapters = [Adapter(ct, cs, rng=rng) for ct, cs in zip(cfg.teacher_widths, cfg.student_widths)]
        self.lams = [Lam(c, rng=rng) for c in cfg.student_widths] if lam else []
        self.ghost = DepthDecoder(cfg.student_widths, cfg, rng=rng)
        self.ghost.freeze()
        if not self.trainable:
            for a in self.adapters:
                a.freeze()
        self._synced_iteration: Optional[int] = None

    @property
    def trainable(self) -> bool:
        return self.use_fam or self.use_lam

    def acclimation_modules(self) -> List[Module]:
        return list(self.fams) + list(self.adapters) + list(self.lams)

    def sync_ghost(self, student_decoder: DepthDecoder, iteration: Optional[int] = None) -> None:
        """Copy the student's decoder weights into the ghost decoder."""
        self.ghost.copy_from(student_decoder)
        self._synced_iteration = iteration

    def encode(self, x: Tensor) -> List[Tensor]:
        """Frozen teacher encoder features (no graph is recorded)."""
        with no_grad():
            was = self.encoder.training
            self.encoder.eval()
            feats = self.encoder(x)
            self.encoder.train(was)
        return feats

    def acclimate(self, feats: Sequence[Tensor], student_shapes: Sequence[tuple]):
        adapted, weighted, scores = [], [], []
        for i, f in enumerate(feats):
            if self.use_fam:
                h, w = f.shape[-2:]
                f = from_tokens(self.fams[i](to_tokens(f)), h, w)
            a = self.adapters[i](f, student_shapes[i][-2:])
            adapted.append(a)
            if self.use_lam:
                fw, s = self.lams[i](a)
                weighted.append(fw)
                scores.append(s)
            else:
                weighted.append(a)
                scores.append(None)
        return adapted, weighted, scores

    def forward(self, x: Tensor, student_shapes: Optional[Sequence[tuple]] = None,
                iteration: Optional[int] = None, feats: Optional[Sequence[Tensor]] = None) -> AcclimatedOutput:
        """``feats`` may carry precomputed encoder features for ``x`` (the encoder is frozen)."""
        if iteration is not None and self._synced_iteration != iteration:
            raise ProtocolError(
                f"ghost decoder is stale: synced at iteration {self._synced_iteration}, used at {iteration}")
        if feats is None:
            feats = self.encode(x)
        if student_shapes is None:
            h, w = x.shape[-2:]
            student_shapes = [(c, h // s, w // s) for c, s in zip(self.cfg.student_widths, (4, 8, 16, 32))]
        adapted, weighted, scores = self.acclimate(feats, student_shapes)
        pred = self.ghost(weighted, out_size=x.shape[-2:]) if self.trainable else None
        return AcclimatedOutput(adapted, scores, pred)
