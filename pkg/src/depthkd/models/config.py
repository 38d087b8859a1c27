from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Tuple


@dataclass
class ModelConfig:
    student_widths: Tuple[int, ...] = (16, 32, 64, 128)
    teacher_widths: Tuple[int, ...] = (32, 64, 128, 256)
    teacher_kind: str = "transformer"          # "transformer" or "cnn"
    teacher_depth: Tuple[int, ...] = (0, 2, 2, 2)  # transformer blocks per stage; 0 = conv stage
    teacher_heads: int = 4
    decoder_channels: int = 64
    n_bins: int = 16
    d_min: float = 0.25
    d_max: float = 10.0
    bin_eps: float = 1e-3
    lg_heads: int = 4
    gamma0: float = 1e-3
    fam_head_dim: int = 32                     # FAM heads per level = channels // fam_head_dim
    fam_mlp_ratio: int = 2

    def __post_init__(self):
        self.student_widths = tuple(int(w) for w in self.student_widths)
        self.teacher_widths = tuple(int(w) for w in self.teacher_widths)
        self.teacher_depth = tuple(int(d) for d in self.teacher_depth)
        if len(self.student_widths) != 4 or len(self.teacher_widths) != 4:
            raise ValueError("encoders must expose exactly four stages")
        if self.teacher_kind not in ("transformer", "cnn"):
            raise ValueError(f"unknown teacher kind {self.teacher_kind!r}")
        if self.fam_head_dim < 1 or any(c % self.fam_head_dim for c in self.teacher_widths):
            raise ValueError(f"teacher widths {self.teacher_widths} must be multiples of fam_head_dim")
        if not 0 < self.d_min < self.d_max:
            raise ValueError("need 0 < d_min < d_max")

    def to_dict(self) -> dict:
        return asdict(self)

    def head_fingerprint(self) -> str:
        return f"df={self.decoder_channels};nb={self.n_bins};d=[{self.d_min},{self.d_max}];eb={self.bin_eps}"

    def student_fingerprint(self, lg: bool) -> str:
        w = "-".join(map(str, self.student_widths))
        lg_part = f"lg(h={self.lg_heads})" if lg else "plain"
        return f"student:cnn:w={w}:{lg_part}:{self.head_fingerprint()}"

    def fam_heads(self, channels: int) -> int:
        return max(1, channels // self.fam_head_dim)

    def teacher_fingerprint(self) -> str:
        w = "-".join(map(str, self.teacher_widths))
        if self.teacher_kind == "transformer":
            depth = "-".join(map(str, self.teacher_depth))
            body = f"transformer:w={w}:depth={depth}:heads={self.teacher_heads}"
        else:
            body = f"cnn:w={w}"
        return f"teacher:{body}:{self.head_fingerprint()}"
