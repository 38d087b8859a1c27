"""Standard depth-evaluation metrics."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np

METRIC_KEYS = ("abs_rel", "sq_rel", "rmse", "log10", "delta1", "delta2", "delta3")


@dataclass
class MetricReport:
    abs_rel: float
    sq_rel: float
    rmse: float
    log10: float
    delta1: float
    delta2: float
    delta3: float
    n_valid: int

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=False)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricReport":
        return cls(**{k: d[k] for k in METRIC_KEYS + ("n_valid",)})


def evaluate(pred, gt, mask=None) -> MetricReport:
    """Metrics over the masked pixels; ``pred`` must be positive there."""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    mask = np.ones(gt.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    p, t = pred[mask], gt[mask]
    n = p.size
    if n == 0:
        raise ValueError("evaluate: empty mask")
    diff = p - t
    ratio = np.maximum(p / t, t / p)
    return MetricReport(
        abs_rel=float(np.mean(np.abs(diff) / t)),
        sq_rel=float(np.mean(diff ** 2 / t)),
        rmse=float(np.sqrt(np.mean(diff ** 2))),
        log10=float(np.mean(np.abs(np.log10(p) - np.log10(t)))),
        delta1=float(np.mean(ratio < 1.25)),
        delta2=float(np.mean(ratio < 1.25 ** 2)),
        delta3=float(np.mean(ratio < 1.25 ** 3)),
        n_valid=int(n),
    )
