"""Training configuration (JSON round-trippable)."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional

from ..data.synth import SceneSpec
from ..errors import ConfigError
from ..losses import LossConfig
from ..models.config import ModelConfig


@dataclass
class TrainConfig:
    epochs: int = 25
    warmup_epochs: int = 7
    batch: int = 8
    lr_start: float = 4e-5
    lr_end: float = 4e-6
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    weight_decay: float = 1e-2
    lambda_kd: float = 0.05
    seed: int = 0
    lg: bool = True
    kd: bool = True
    fam: bool = True
    lam: bool = True
    flip: bool = True
    cache_teacher_features: bool = True
    teacher_epochs: int = 25
    teacher_seed: int = 1000
    data_dir: Optional[str] = None
    out_dir: Optional[str] = None
    teacher_ckpt: Optional[str] = None
    checkpoint_every: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)
    data: SceneSpec = field(default_factory=SceneSpec)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        try:
            if isinstance(self.model, dict):
                self.model = ModelConfig(**self.model)
            if isinstance(self.data, dict):
                self.data = SceneSpec.from_dict(self.data)
            if isinstance(self.loss, dict):
                self.loss = LossConfig(**self.loss)
            # lambda_kd is the single source of truth; copy so configs never share a LossConfig
            self.loss = replace(self.loss, lambda_kd=self.lambda_kd)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc

    def validate(self) -> "TrainConfig":
        if self.epochs < 1 or self.batch < 1:
            raise ConfigError("epochs and batch must be positive")
        if not 0 <= self.warmup_epochs < self.epochs:
            raise ConfigError(f"warmup_epochs ({self.warmup_epochs}) must be in [0, epochs={self.epochs})")
        if not 0 < self.lr_end <= self.lr_start:
            raise ConfigError(f"need 0 < lr_end <= lr_start, got {self.lr_end} / {self.lr_start}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1) or self.adam_eps <= 0:
            raise ConfigError("invalid Adam hyperparameters")
        if self.weight_decay < 0 or self.lambda_kd < 0:
            raise ConfigError("weight_decay and lambda_kd must be non-negative")
        return self

    def to_dict(self) -> dict:
        d = asdict(self)
        d["data"] = self.data.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**d).validate()
        except (TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from exc

    @classmethod
    def load(cls, path) -> "TrainConfig":
        try:
            d = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{path}: cannot read config ({exc})") from exc
        return cls.from_dict(d)

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)
