"""Teacher pretraining and the distillation training loop.

One student iteration runs, in order: ghost-decoder sync, frozen teacher
encoding, acclimation (FAM -> adapter -> LAM) with the ghost-decoder
prediction, student forward, the student update on ``SILog + lambda * KD``
and finally the acclimation update on the teacher-side SILog.
"""

from __future__ import annotations

import json
import logging
import math
from collections import OrderedDict
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from ..core.rng import Rng
from ..core.tensor import Tensor, no_grad
from ..data.dataset import Batch, Dataset, batch_iterator, generate_split, load_split, num_batches
from ..errors import DivergenceError, FingerprintError, FormatError
from ..losses import attentive_kd, silog, total_loss
from ..metrics import MetricReport, evaluate
from ..models import AcclimatedTeacher, StudentModel, TeacherModel, pyramid_shapes
from ..nn.module import Module, ParameterStore, module_checksum
from . import checkpoint
from .config import TrainConfig
from .optim import Adam, linear_lr

log = logging.getLogger(__name__)

EVAL_BATCH = 8


# -- data and evaluation helpers ---------------------------------------------------

def load_data(cfg: TrainConfig):
    """(train, val) from ``cfg.data_dir`` if set, otherwise generated in memory from ``cfg.data``."""
    if cfg.data_dir:
        return load_split(cfg.data_dir, "train"), load_split(cfg.data_dir, "val")
    return generate_split(cfg.data, "train"), generate_split(cfg.data, "val")


def predict(forward: Callable[[Tensor], Tensor], images: np.ndarray, batch: int = EVAL_BATCH) -> np.ndarray:
    """Depth maps for ``images`` in fixed-size chunks (chunking fixed for determinism)."""
    out = []
    with no_grad():
        for lo in range(0, len(images), batch):
            out.append(forward(Tensor(images[lo:lo + batch])).data)
    return np.concatenate(out)


def evaluate_model(model: Module, dataset: Dataset) -> MetricReport:
    was = model.training
    model.eval()
    try:
        pred = predict(lambda x: model(x).pred.depth, dataset.images)
    finally:
        model.train(was)
    return evaluate(pred, dataset.depth, dataset.mask)


def _check_finite(name: str, value: float, epoch: int, iteration: int) -> None:
    if not math.isfinite(value):
        raise DivergenceError(f"{name} became {value} at epoch {epoch + 1}, iteration {iteration}")


class TeacherFeatureCache:
    """Frozen-encoder features for every training sample, in both flip states.

    The teacher encoder never changes during distillation, so its features are
    a pure function of the image and can be computed once and shared by every
    run that uses the same teacher and dataset.
    """

    def __init__(self, encoder: Module, dataset: Dataset, flip: bool = True, batch: int = EVAL_BATCH):
        was = encoder.training
        encoder.eval()
        self.flip = flip
        self.plain = self._encode(encoder, dataset.images, batch)
        self.flipped = self._encode(encoder, np.ascontiguousarray(dataset.images[..., ::-1]), batch) if flip else None
        encoder.train(was)

    @staticmethod
    def _encode(encoder: Module, images: np.ndarray, batch: int) -> List[np.ndarray]:
        chunks: List[List[np.ndarray]] = []
        with no_grad():
            for lo in range(0, len(images), batch):
                chunks.append([f.data for f in encoder(Tensor(images[lo:lo + batch]))])
        return [np.concatenate([c[l] for c in chunks]) for l in range(len(chunks[0]))]

    def lookup(self, indices: np.ndarray, flips: np.ndarray) -> List[Tensor]:
        feats = []
        for l, plain in enumerate(self.plain):
            f = plain[indices]
            if flips.any():
                f[flips] = self.flipped[l][indices[flips]]
            feats.append(Tensor(f))
        return feats


# -- shared epoch loop -------------------------------------------------------------

class _Loop:
    """Epoch/batch bookkeeping with exact mid-epoch resume.

    Subclasses implement ``train_step``, ``evaluate``, the state that must go in
    a checkpoint, and the epoch-end hook.
    """

    kind = "loop"

    def __init__(self, cfg: TrainConfig, train: Dataset, val: Dataset, epochs: int, shuffle_seed: int):
        self.cfg = cfg
        self.train_set, self.val_set = train, val
        self.epochs = epochs
        self.shuffle_seed = shuffle_seed
        self.per_epoch = num_batches(len(train), cfg.batch)
        self.total_iterations = epochs * self.per_epoch
        self.iteration = 0
        self.history: List[dict] = []
        self.sums: Dict[str, float] = {}
        self.hooks: List[Callable[["_Loop", str], None]] = []

    @property
    def epoch(self) -> int:
        return self.iteration // self.per_epoch

    @property
    def done(self) -> bool:
        return self.iteration >= self.total_iterations

    def lr(self, t: Optional[int] = None) -> float:
        t = self.iteration if t is None else t
        return linear_lr(t, self.total_iterations, self.cfg.lr_start, self.cfg.lr_end)

    def _emit(self, event: str) -> None:
        for hook in self.hooks:
            hook(self, event)

    def run(self, stop_at: Optional[int] = None, checkpoint_path=None) -> "_Loop":
        """Train until ``stop_at`` iterations (default: the end) have completed."""
        stop_at = self.total_iterations if stop_at is None else min(stop_at, self.total_iterations)
        while self.iteration < stop_at:
            epoch = self.epoch
            start = self.iteration - epoch * self.per_epoch
            batches = batch_iterator(self.train_set, self.cfg.batch, self.shuffle_seed, epoch,
                                     flip=self.cfg.flip, start_batch=start)
            for batch in batches:
                if self.iteration >= stop_at:
                    break
                self._emit("iteration_start")
                logs = self.train_step(batch, epoch)
                for k, v in logs.items():
                    _check_finite(k, v, epoch, self.iteration)
                    self.sums[k] = self.sums.get(k, 0.0) + v
                self.sums["count"] = self.sums.get("count", 0.0) + 1
                self.iteration += 1
                self._emit("iteration_end")
                if self.iteration % self.per_epoch == 0:
                    self._end_epoch(epoch)
                every = self.cfg.checkpoint_every
                if checkpoint_path is not None and every and self.iteration % every == 0:
                    self.save(checkpoint_path)
        return self

    def _end_epoch(self, epoch: int) -> None:
        n = self.sums.pop("count", 1.0)
        record = {"epoch": epoch + 1, "iteration": self.iteration, "lr": self.lr(self.iteration - 1)}
        record.update({k: v / n for k, v in sorted(self.sums.items())})
        self.sums = {}
        record.update(self.epoch_end(epoch))
        self.history.append(record)
        log.info("%s epoch %d/%d %s", self.kind, epoch + 1, self.epochs,
                 " ".join(f"{k}={v:.4g}" for k, v in record.items() if isinstance(v, float)))
        self._emit("epoch_end")

    # subclass interface
    def train_step(self, batch: Batch, epoch: int) -> Dict[str, float]:
        raise NotImplementedError

    def epoch_end(self, epoch: int) -> dict:
        return {}

    def fingerprint(self) -> str:
        raise NotImplementedError

    def tensors(self) -> "OrderedDict[str, np.ndarray]":
        raise NotImplementedError

    def load_tensors(self, tensors) -> None:
        raise NotImplementedError

    def meta(self) -> dict:
        return {"kind": self.kind, "config": self.cfg.to_dict(), "iteration": self.iteration,
                "history": self.history, "sums": self.sums}

    def save(self, path) -> Path:
        return checkpoint.save(path, self.fingerprint(), self.meta(), self.tensors())

    def resume(self, path) -> "_Loop":
        ck = checkpoint.load(path, self.fingerprint())
        if ck.meta.get("kind") != self.kind:
            raise FormatError(f"{path}: expected a {self.kind} checkpoint, got {ck.meta.get('kind')}")
        self.load_tensors(ck.tensors)
        self.iteration = int(ck.meta["iteration"])
        self.history = list(ck.meta["history"])
        self.sums = dict(ck.meta["sums"])
        self._restore_meta(ck.meta)
        return self

    def _restore_meta(self, meta: dict) -> None:
        pass


# -- teacher -----------------------------------------------------------------------

class TeacherTrainer(_Loop):
    """Supervised SILog training of the teacher; keeps the best-val weights."""

    kind = "teacher"

    def __init__(self, cfg: TrainConfig, train: Dataset, val: Dataset):
        super().__init__(cfg, train, val, cfg.teacher_epochs, cfg.teacher_seed)
        self.model = TeacherModel(cfg.model, rng=Rng(cfg.teacher_seed).stream("init", "teacher"))
        self.store = ParameterStore({"teacher": self.model})
        self.opt = Adam(self.store.trainable(), cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
        self.best_rmse = math.inf
        self.best_state: Optional[OrderedDict] = None
        self.best_record: Optional[dict] = None

    def fingerprint(self) -> str:
        return self.model.fingerprint

    def train_step(self, batch: Batch, epoch: int) -> Dict[str, float]:
        self.model.train()
        out = self.model(Tensor(batch.images))
        loss = silog(out.pred.depth, batch.depth, batch.mask, self.cfg.loss.alpha, self.cfg.loss.beta)
        _check_finite("teacher loss", float(loss.data), epoch, self.iteration)
        self.store.zero_grad()
        loss.backward()
        self.opt.step(self.lr())
        return {"loss": float(loss.data)}

    def epoch_end(self, epoch: int) -> dict:
        report = evaluate_model(self.model, self.val_set)
        if report.rmse < self.best_rmse:
            self.best_rmse = report.rmse
            self.best_state = OrderedDict((k, v.copy()) for k, v in self.store.state().items())
            self.best_record = {"epoch": epoch + 1, **report.to_dict()}
        return {"val_rmse": report.rmse}

    def tensors(self):
        out = self.store.state()
        out.update(self.opt.state("optim."))
        if self.best_state is not None:
            out.update((f"best.{k}", v) for k, v in self.best_state.items())
        return out

    def load_tensors(self, tensors) -> None:
        self.store.load(tensors)
        self.opt.load(tensors, "optim.")
        best = OrderedDict((k[5:], v) for k, v in tensors.items() if k.startswith("best."))
        self.best_state = best or None

    def meta(self) -> dict:
        m = super().meta()
        m.update(best_rmse=self.best_rmse if self.best_state is not None else None, best=self.best_record)
        return m

    def _restore_meta(self, meta: dict) -> None:
        self.best_record = meta.get("best")
        self.best_rmse = meta["best_rmse"] if meta.get("best_rmse") is not None else math.inf

    def save_best(self, path) -> Path:
        """The deliverable teacher checkpoint: best-val weights only, with their val record."""
        if self.best_state is None:
            raise RuntimeError("no epoch has completed yet")
        meta = {"kind": "teacher_model", "config": self.cfg.model.to_dict(), "val": self.best_record,
                "history": self.history}
        return checkpoint.save(path, self.fingerprint(), meta, self.best_state)


def train_teacher(cfg: TrainConfig, train: Optional[Dataset] = None, val: Optional[Dataset] = None,
                  out_dir=None) -> TeacherTrainer:
    cfg.validate()
    if train is None or val is None:
        train, val = load_data(cfg)
    trainer = TeacherTrainer(cfg, train, val)
    out = Path(out_dir or cfg.out_dir) if (out_dir or cfg.out_dir) else None
    trainer.run(checkpoint_path=out / "teacher_last.ddck" if out else None)
    trainer.store.load(trainer.best_state)
    if out:
        trainer.save_best(out / "teacher.ddck")
        _write_history(out / "teacher_metrics.jsonl", trainer.history)
    return trainer


def load_teacher(path, cfg) -> TeacherModel:
    """Rebuild a teacher from its checkpoint; the model config must produce the same fingerprint."""
    from ..models.config import ModelConfig
    model_cfg = cfg if isinstance(cfg, ModelConfig) else cfg.model
    teacher = TeacherModel(model_cfg, rng=np.random.default_rng(0))
    ck = checkpoint.load(path, teacher.fingerprint)
    try:
        teacher.load_state_dict(ck.tensors, "teacher")
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return teacher


# -- student -----------------------------------------------------------------------

class StudentTrainer(_Loop):
    """Distillation of the student from an acclimated, frozen teacher encoder."""

    kind = "student"

    def __init__(self, cfg: TrainConfig, train: Dataset, val: Dataset, teacher: Optional[TeacherModel] = None,
                 feature_cache: Optional[TeacherFeatureCache] = None):
        super().__init__(cfg, train, val, cfg.epochs, cfg.seed)
        rng = Rng(cfg.seed)
        self.student = StudentModel(cfg.model, lg=cfg.lg, rng=rng.stream("init", "student"))
        self.acc: Optional[AcclimatedTeacher] = None
        modules: Dict[str, Module] = {"student": self.student}
        if cfg.kd:
            if teacher is None:
                raise ValueError("distillation needs a teacher model")
            if teacher.fingerprint != cfg.model.teacher_fingerprint():
                raise FingerprintError("teacher does not match the configured teacher architecture")
            self.acc = AcclimatedTeacher(teacher, cfg.model, fam=cfg.fam, lam=cfg.lam,
                                         rng=rng.stream("init", "acclimation"))
            modules["teacher"] = self.acc
            if cfg.cache_teacher_features and feature_cache is None:
                feature_cache = TeacherFeatureCache(self.acc.encoder, train, flip=cfg.flip)
        self.cache = feature_cache if self.acc is not None else None
        self.store = ParameterStore(modules)
        self.opt_student = Adam(OrderedDict(self.student.named_parameters("student")),
                                cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
        acc_params = OrderedDict()
        if self.acc is not None and self.acc.trainable:
            for name, p in self.store.items():
                if not p.frozen and name.startswith("teacher."):
                    acc_params[name] = p
        self.opt_acc = Adam(acc_params, cfg.beta1, cfg.beta2, cfg.adam_eps, cfg.weight_decay)
        self.last_grads: Dict[str, List[str]] = {}

    def fingerprint(self) -> str:
        return self.student.fingerprint

    def warmup_active(self, epoch: int) -> bool:
        return epoch < self.cfg.warmup_epochs

    def _received_grad(self) -> List[str]:
        return [n for n, p in self.store.items() if p.grad is not None]

    def train_step(self, batch: Batch, epoch: int) -> Dict[str, float]:
        cfg = self.cfg
        lr = self.lr()
        x = Tensor(batch.images)
        self.student.train()
        acc_out = None
        if self.acc is not None:
            self.acc.sync_ghost(self.student.dec, self.iteration)
            feats = self.cache.lookup(batch.indices, batch.flips) if self.cache else None
            shapes = pyramid_shapes(cfg.model.student_widths, *x.shape[-2:])
            acc_out = self.acc(x, shapes, iteration=self.iteration, feats=feats)
        out = self.student(x)
        kd = None
        if acc_out is not None:
            targets = [a.detach() for a in acc_out.features]
            scores = [s.detach() if s is not None else None for s in acc_out.scores]
            kd = attentive_kd(out.features, targets, scores)
        teacher_pred = acc_out.pred.depth if acc_out is not None and acc_out.pred is not None else None
        obj = total_loss(out.pred.depth, teacher_pred, batch.depth, batch.mask, kd,
                         self.warmup_active(epoch), cfg.loss)
        _check_finite("student loss", float(obj.student.data), epoch, self.iteration)

        self.store.zero_grad()
        obj.student.backward()
        self.last_grads = {"student": self._received_grad()}
        self.opt_student.step(lr)

        logs = {"task": float(obj.task.data), "loss": float(obj.student.data)}
        if kd is not None:
            logs["kd"] = float(kd.data)
        if obj.acclimation is not None:
            _check_finite("acclimation loss", float(obj.acclimation.data), epoch, self.iteration)
            self.store.zero_grad()
            obj.acclimation.backward()
            self.last_grads["acclimation"] = self._received_grad()
            self.opt_acc.step(lr)
            logs["acclimation"] = float(obj.acclimation.data)
        self.store.zero_grad()
        return logs

    def epoch_end(self, epoch: int) -> dict:
        return {"val_rmse": evaluate_model(self.student, self.val_set).rmse}

    def evaluate(self) -> MetricReport:
        return evaluate_model(self.student, self.val_set)

    def evaluate_acclimated(self, dataset: Optional[Dataset] = None) -> MetricReport:
        """Frozen teacher encoder + acclimation + ghost decoder synced to the current student decoder."""
        if self.acc is None or not self.acc.trainable:
            raise ValueError("no acclimated teacher in this run")
        dataset = dataset or self.val_set
        self.acc.sync_ghost(self.student.dec)
        pred = predict(lambda x: self.acc(x).pred.depth, dataset.images)
        return evaluate(pred, dataset.depth, dataset.mask)

    def tensors(self):
        out = self.store.state()
        out.update(self.opt_student.state("optim.student."))
        out.update(self.opt_acc.state("optim.acclimation."))
        return out

    def load_tensors(self, tensors) -> None:
        self.store.load(tensors)
        self.opt_student.load(tensors, "optim.student.")
        self.opt_acc.load(tensors, "optim.acclimation.")

    def meta(self) -> dict:
        m = super().meta()
        if self.acc is not None:
            m["teacher_fingerprint"] = self.cfg.model.teacher_fingerprint()
            m["teacher_encoder_checksum"] = module_checksum(self.acc.encoder)
        return m


def train_student(cfg: TrainConfig, teacher: Optional[TeacherModel] = None, train: Optional[Dataset] = None,
                  val: Optional[Dataset] = None, out_dir=None, resume=None, stop_at: Optional[int] = None,
                  feature_cache: Optional[TeacherFeatureCache] = None) -> StudentTrainer:
    cfg.validate()
    if cfg.kd and teacher is None:
        if not cfg.teacher_ckpt:
            raise ValueError("distillation is enabled but no teacher checkpoint was given")
        teacher = load_teacher(cfg.teacher_ckpt, cfg)
    if train is None or val is None:
        train, val = load_data(cfg)
    trainer = StudentTrainer(cfg, train, val, teacher, feature_cache)
    if resume is not None:
        trainer.resume(resume)
    out = Path(out_dir or cfg.out_dir) if (out_dir or cfg.out_dir) else None
    trainer.run(stop_at=stop_at, checkpoint_path=out / "student_last.ddck" if out else None)
    if out:
        trainer.save(out / ("student.ddck" if trainer.done else "student_last.ddck"))
        _write_history(out / "student_metrics.jsonl", trainer.history)
    return trainer


def load_model(path):
    """Any deliverable checkpoint (teacher or student) as ``(model, checkpoint)``."""
    from ..models.config import ModelConfig
    ck = checkpoint.load(path)
    kind = ck.meta.get("kind")
    if kind == "teacher_model":
        model = TeacherModel(ModelConfig(**ck.meta["config"]), rng=np.random.default_rng(0))
        prefix = "teacher"
    elif kind == "student":
        cfg = TrainConfig.from_dict(ck.meta["config"])
        model = StudentModel(cfg.model, lg=cfg.lg, rng=np.random.default_rng(0))
        prefix = "student"
    else:
        raise FormatError(f"{path}: checkpoint kind {kind!r} holds no evaluable model")
    if model.fingerprint != ck.fingerprint:
        raise FingerprintError(f"{path}: fingerprint {ck.fingerprint!r} does not match its recorded config")
    try:
        model.load_state_dict(ck.tensors, prefix)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{path}: {exc}") from exc
    return model, ck


def _write_history(path: Path, history: Sequence[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text("".join(json.dumps(r, sort_keys=True) + "\n" for r in history))
