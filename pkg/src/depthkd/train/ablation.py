"""Component ablation: the five cumulative rows from baseline to the full method."""

from __future__ import annotations

import json
import logging
import statistics
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence

from ..data.dataset import Dataset
from ..metrics import METRIC_KEYS, MetricReport
from ..models import TeacherModel
from .config import TrainConfig
from .loop import StudentTrainer, TeacherFeatureCache, evaluate_model, load_data, load_teacher

log = logging.getLogger(__name__)

ROWS: "OrderedDict[str, dict]" = OrderedDict([
    ("baseline", dict(lg=False, kd=False, fam=False, lam=False)),
    ("lg", dict(lg=True, kd=False, fam=False, lam=False)),
    ("lg_kd", dict(lg=True, kd=True, fam=False, lam=False)),
    ("lg_kd_fam", dict(lg=True, kd=True, fam=True, lam=False)),
    ("full", dict(lg=True, kd=True, fam=True, lam=True)),
])
LABELS = {"baseline": "none", "lg": "+LG", "lg_kd": "+LG+KD", "lg_kd_fam": "+LG+KD+FAM", "full": "full"}


@dataclass
class AblationResult:
    seeds: List[int]
    rows: Dict[str, Dict[int, MetricReport]] = field(default_factory=dict)
    acclimated: Dict[str, Dict[int, MetricReport]] = field(default_factory=dict)
    teacher: Optional[MetricReport] = None

    def median(self, row: str, key: str = "rmse") -> float:
        return statistics.median(getattr(r, key) for r in self.rows[row].values())

    def median_acclimated(self, row: str, key: str = "rmse") -> float:
        return statistics.median(getattr(r, key) for r in self.acclimated[row].values())

    def to_dict(self) -> dict:
        return {
            "seeds": list(self.seeds),
            "teacher": self.teacher.to_dict() if self.teacher else None,
            "rows": {row: {"label": LABELS.get(row, row),
                           "runs": {str(s): r.to_dict() for s, r in runs.items()},
                           "median": {k: self.median(row, k) for k in METRIC_KEYS}}
                     for row, runs in self.rows.items()},
            "acclimated_teacher": {row: {str(s): r.to_dict() for s, r in runs.items()}
                                   for row, runs in self.acclimated.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def summary(self) -> str:
        lines = [f"{'row':<12} {'rmse':>8} {'abs_rel':>8} {'delta1':>8}   (median over seeds {self.seeds})"]
        for row in self.rows:
            lines.append(f"{LABELS.get(row, row):<12} {self.median(row):8.4f} {self.median(row, 'abs_rel'):8.4f} "
                         f"{self.median(row, 'delta1'):8.4f}")
        if self.teacher is not None:
            lines.append(f"{'teacher':<12} {self.teacher.rmse:8.4f} {self.teacher.abs_rel:8.4f} "
                         f"{self.teacher.delta1:8.4f}")
        for row in self.acclimated:
            lines.append(f"{'acclim.' + LABELS.get(row, row):<12} {self.median_acclimated(row):8.4f}")
        if "baseline" in self.rows and "full" in self.rows:
            base, full = self.median("baseline"), self.median("full")
            lines.append(f"full vs baseline: {100 * (base - full) / base:+.1f}% rmse")
        return "\n".join(lines)


def run_ablation(cfg: TrainConfig, teacher: Optional[TeacherModel] = None, train: Optional[Dataset] = None,
                 val: Optional[Dataset] = None, seeds: Optional[Sequence[int]] = None,
                 rows: Optional[Iterable[str]] = None, out_dir=None) -> AblationResult:
    """Train every requested row for every seed with one shared teacher.

    Rows with a trainable acclimation pathway also report the acclimated
    teacher (frozen encoder + FAM/LAM + ghost decoder) on the val split.
    """
    cfg.validate()
    if train is None or val is None:
        train, val = load_data(cfg)
    seeds = list(seeds) if seeds is not None else [cfg.seed, cfg.seed + 1, cfg.seed + 2]
    rows = list(rows) if rows is not None else list(ROWS)
    unknown = [r for r in rows if r not in ROWS]
    if unknown:
        raise ValueError(f"unknown ablation rows {unknown}; choose from {list(ROWS)}")
    needs_teacher = any(ROWS[r]["kd"] for r in rows)
    if needs_teacher and teacher is None:
        teacher = load_teacher(cfg.teacher_ckpt, cfg)
    result = AblationResult(seeds)
    cache = None
    if needs_teacher:
        result.teacher = evaluate_model(teacher, val)
        if cfg.cache_teacher_features:
            cache = TeacherFeatureCache(teacher.enc, train, flip=cfg.flip)
    out = Path(out_dir) if out_dir else None
    for row in rows:
        result.rows[row] = {}
        for seed in seeds:
            run_cfg = cfg.with_(seed=seed, **ROWS[row])
            trainer = StudentTrainer(run_cfg, train, val, teacher if run_cfg.kd else None, cache)
            trainer.run()
            report = trainer.evaluate()
            result.rows[row][seed] = report
            log.info("ablation %s seed %d: rmse %.4f", LABELS[row], seed, report.rmse)
            if trainer.acc is not None and trainer.acc.trainable:
                result.acclimated.setdefault(row, {})[seed] = trainer.evaluate_acclimated()
            if out:
                trainer.save(out / f"{row}_seed{seed}.ddck")
    if out:
        out.mkdir(parents=True, exist_ok=True)
        (out / "ablation.json").write_text(result.to_json())
        (out / "ablation.txt").write_text(result.summary() + "\n")
    return result
