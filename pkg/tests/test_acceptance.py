"""Acceptance suite: one group of tests per criterion, summarised at the end of the run.

Criteria 5 to 7 share one desk-scale experiment (teacher pretraining plus
three ablation rows over three seeds) that takes most of the suite's runtime.
"""

import time

import numpy as np
import pytest

from conftest import tiny_config
from depthkd.core import Tensor, default_dtype, ops
from depthkd.gradcheck_suite import CASES, TOLERANCE, run_case
from depthkd.losses import attentive_kd, silog
from depthkd.models import CnnEncoder, ModelConfig, bins_from_logits, depth_from_bins
from depthkd.nn import LgConv, module_checksum, wrap_backbone_with_lgconv
from depthkd.train import TrainConfig, run_ablation, train_teacher
from depthkd.train.loop import StudentTrainer, load_data

# -- 1. gradient checks -------------------------------------------------------------


@pytest.mark.criterion(1)
def test_gradcheck_suite_passes_within_budget():
    start = time.perf_counter()
    errors = {name: run_case(name).max_error for name in CASES}
    elapsed = time.perf_counter() - start
    print(f"\ngradcheck max rel err per block: {errors}  ({elapsed:.1f}s)")
    assert max(errors.values()) < TOLERANCE
    assert elapsed < 300


# -- 2. loss oracles --------------------------------------------------------------------

@pytest.mark.criterion(2)
def test_silog_hand_case():
    with default_dtype(np.float64):
        loss = silog(Tensor(np.exp([1.0, 2.0])), np.ones(2), alpha=10.0, beta=0.85)
    assert abs(float(loss.data) - 7.66485) <= 1e-4


@pytest.mark.criterion(2)
def test_attentive_kd_hand_case():
    with default_dtype(np.float64):
        fs = Tensor(np.array([[[[3.0, 0.0], [0.0, 0.0]]]]))
        loss = attentive_kd([fs], [Tensor(np.zeros((1, 1, 2, 2)))], [Tensor(np.ones((1, 2, 2)))])
    assert abs(float(loss.data) - 2.25) <= 1e-9


@pytest.mark.criterion(2)
def test_silog_common_rescale_invariance():
    rng = np.random.default_rng(0)
    worst = 0.0
    with default_dtype(np.float64):
        for _ in range(200):
            pred, gt = rng.uniform(0.1, 20, 64), rng.uniform(0.1, 20, 64)
            s = 10 ** rng.uniform(-3, 3)
            a = float(silog(Tensor(pred), gt).data)
            b = float(silog(Tensor(pred * s), gt * s).data)
            worst = max(worst, abs(a - b) / a)
    assert worst < 1e-12


# -- 3. protocol invariants over a two-epoch smoke run ------------------------------

class ProtocolProbe:
    """Hook recording the per-iteration invariants of a student run."""

    def __init__(self, trainer: StudentTrainer):
        self.encoder0 = module_checksum(trainer.acc.encoder)
        self.decoder_at_start = None
        self.ghost_mismatches = []
        self.encoder_changes = []
        self.grad_sets = []
        self.snapshots = {}

    def __call__(self, trainer, event):
        it = trainer.iteration
        if event == "iteration_start":
            self.decoder_at_start = module_checksum(trainer.student.dec, include_buffers=False)
        elif event == "iteration_end":
            # the ghost was synced from the pre-update student decoder and not touched since
            if module_checksum(trainer.acc.ghost, include_buffers=False) != self.decoder_at_start:
                self.ghost_mismatches.append(it)
            self.grad_sets.append({k: set(v) for k, v in trainer.last_grads.items()})
        elif event == "epoch_end":
            self.snapshots[trainer.epoch] = {k: v.copy() for k, v in trainer.store.state().items()}
        if module_checksum(trainer.acc.encoder) != self.encoder0:
            self.encoder_changes.append((event, it))


@pytest.fixture(scope="module")
def smoke(tiny_data, tiny_teacher):
    runs = {}
    for lam in (0.5, 0.0):
        trainer = StudentTrainer(tiny_config(lambda_kd=lam), *tiny_data, teacher=tiny_teacher.model)
        probe = ProtocolProbe(trainer)
        trainer.hooks.append(probe)
        trainer.run()
        runs[lam] = (trainer, probe)
    return runs


@pytest.mark.criterion(3)
def test_ghost_decoder_mirrors_student_every_iteration(smoke):
    trainer, probe = smoke[0.5]
    assert trainer.total_iterations == len(probe.grad_sets) == 6
    assert probe.ghost_mismatches == []


@pytest.mark.criterion(3)
def test_teacher_encoder_constant_end_to_end(smoke):
    trainer, probe = smoke[0.5]
    assert probe.encoder_changes == []
    assert module_checksum(trainer.acc.encoder) == module_checksum(smoke[0.0][0].acc.encoder)


@pytest.mark.criterion(3)
def test_warmup_matches_zero_lambda_run_bitwise(smoke):
    warm, zero = smoke[0.5][1].snapshots, smoke[0.0][1].snapshots
    assert all(warm[1][k].tobytes() == zero[1][k].tobytes() for k in warm[1])
    # after warmup the distillation term must actually change the student
    assert any(warm[2][k].tobytes() != zero[2][k].tobytes() for k in warm[2] if k.startswith("student."))


@pytest.mark.criterion(3)
def test_objectives_update_disjoint_parameter_sets(smoke):
    trainer, probe = smoke[0.5]
    student = {n for n, p in trainer.store.items() if n.startswith("student.") and not p.frozen}
    acclimation = set(trainer.opt_acc.params)
    assert acclimation and all(".enc." not in n and ".ghost." not in n for n in acclimation)
    for grads in probe.grad_sets:
        assert grads["student"] == student
        assert grads["acclimation"] == acclimation
        assert not grads["student"] & grads["acclimation"]


# -- 4. LG-Conv transparency ----------------------------------------------------------

def _encoders(gamma0):
    widths = (16, 32, 64, 128)
    plain = CnnEncoder(widths, rng=np.random.default_rng(0))
    wrapped = CnnEncoder(widths, rng=np.random.default_rng(0))
    wrap_backbone_with_lgconv(wrapped, gamma0=gamma0, rng=np.random.default_rng(1))
    assert any(isinstance(m, LgConv) for _, m in wrapped.named_modules())
    return plain, wrapped


@pytest.mark.criterion(4)
@pytest.mark.parametrize("mode", ["train", "eval"])
def test_lgconv_zero_gamma_is_bitwise_transparent(mode):
    plain, wrapped = _encoders(0.0)
    x = Tensor(np.random.default_rng(2).random((2, 3, 64, 64)))
    for m in (plain, wrapped):
        m.train(mode == "train")
    for a, b in zip(plain(x), wrapped(x)):
        assert a.data.tobytes() == b.data.tobytes()


def _rel(a, b):
    return float(np.linalg.norm(b - a) / np.linalg.norm(a))


@pytest.mark.criterion(4)
def test_lgconv_default_gamma_perturbs_each_block_under_one_percent(monkeypatch):
    # measured in place: each wrapped conv against its own local branch on the same input
    rels = []
    forward = LgConv.forward

    def spy(self, x):
        out = forward(self, x)
        rels.append(_rel(self.local(x).data, out.data))
        return out

    monkeypatch.setattr(LgConv, "forward", spy)
    plain, wrapped = _encoders(1e-3)
    wrapped(Tensor(np.random.default_rng(2).random((2, 3, 64, 64))))
    print(f"\nper-block relative perturbation: max {max(rels):.2e} over {len(rels)} blocks")
    assert len(rels) == 9 and 0 < min(rels) and max(rels) < 0.01


@pytest.mark.criterion(4)
def test_lgconv_default_gamma_perturbs_encoder_under_one_percent():
    plain, wrapped = _encoders(1e-3)
    x = Tensor(np.random.default_rng(2).random((2, 3, 64, 64)))
    plain.eval()
    wrapped.eval()
    rels = [_rel(a.data, b.data) for a, b in zip(plain(x), wrapped(x))]
    plain.train()
    wrapped.train()
    compounded = [_rel(a.data, b.data) for a, b in zip(plain(x), wrapped(x))]
    print(f"\nencoder perturbation per level, eval {np.round(rels, 5)}; train-mode batch stats {np.round(compounded, 5)}")
    assert 0 < min(rels) and max(rels) < 0.01


# -- 5 to 7. desk-scale ablation ------------------------------------------------------

# Desk schedule: the default synthetic spec and architecture with a short
# schedule and a larger learning rate than the full-scale recipe.
DESK = dict(epochs=10, warmup_epochs=3, lr_start=1e-3, lr_end=1e-4, teacher_epochs=10, lambda_kd=0.05)
SEEDS = (0, 1, 2)
BUDGET_S = 30 * 60


@pytest.fixture(scope="module")
def desk():
    cfg = TrainConfig(**DESK)
    start = time.perf_counter()
    train, val = load_data(cfg)
    teacher = train_teacher(cfg, train, val).model
    result = run_ablation(cfg, teacher, train, val, seeds=SEEDS, rows=["baseline", "lg_kd", "full"])
    elapsed = time.perf_counter() - start
    print("\n" + result.summary() + f"\nwall time {elapsed:.0f}s")
    return result, elapsed


@pytest.mark.slow
@pytest.mark.criterion(5)
def test_full_method_beats_ablations_within_budget(desk):
    result, elapsed = desk
    full, lg_kd, base = (result.median(r) for r in ("full", "lg_kd", "baseline"))
    print(f"\nmedian rmse full {full:.4f} lg_kd {lg_kd:.4f} baseline {base:.4f} "
          f"gain {100 * (1 - full / base):.1f}%  time {elapsed:.0f}s")
    assert elapsed <= BUDGET_S
    assert full < lg_kd
    assert full < base
    assert full <= 0.95 * base


@pytest.mark.slow
@pytest.mark.criterion(6)
def test_acclimation_helps_cross_family_teacher(desk):
    result, _ = desk
    assert result.median("full") < result.median("lg_kd")


@pytest.mark.slow
@pytest.mark.criterion(7)
def test_acclimated_teacher_stays_close_to_teacher(desk):
    result, _ = desk
    acc, teacher = result.median_acclimated("full"), result.teacher.rmse
    print(f"\nacclimated teacher rmse {acc:.4f} vs teacher {teacher:.4f} (ratio {acc / teacher:.3f})")
    assert acc <= 1.15 * teacher


# -- 8. bin heads ------------------------------------------------------------------------

@pytest.mark.criterion(8)
def test_bin_heads_over_random_logits():
    rng = np.random.default_rng(0)
    cfg = ModelConfig()
    n, nb = 1000, cfg.n_bins
    scale = 10 ** rng.uniform(-2, 2, (n, 1))
    logits = Tensor(rng.normal(size=(n, nb)) * scale)
    widths, centers = bins_from_logits(logits, cfg.d_min, cfg.d_max, cfg.bin_eps)
    probs = ops.softmax(Tensor(rng.normal(size=(n, nb, 4, 4)) * scale[:, :, None, None]), axis=1)
    depth = depth_from_bins(probs, centers)
    assert np.abs(widths.data.sum(-1) - 1).max() <= 1e-5
    assert np.all(np.diff(centers.data, axis=-1) > 0)
    assert np.abs(probs.data.sum(1) - 1).max() <= 1e-5
    assert depth.data.min() > cfg.d_min and depth.data.max() < cfg.d_max


# -- 9. determinism and resume --------------------------------------------------------

def _student_bytes(tmp_path, name, tiny_data, teacher, stop_at=None, resume=None):
    trainer = StudentTrainer(tiny_config(), *tiny_data, teacher=teacher)
    if resume is not None:
        trainer.resume(resume)
    trainer.run(stop_at=stop_at)
    return trainer.save(tmp_path / name).read_bytes()


@pytest.mark.criterion(9)
def test_same_seed_gives_identical_checkpoint(tmp_path, tiny_data, tiny_teacher):
    a = _student_bytes(tmp_path, "a.ddck", tiny_data, tiny_teacher.model)
    b = _student_bytes(tmp_path, "b.ddck", tiny_data, tiny_teacher.model)
    assert a == b


@pytest.mark.criterion(9)
@pytest.mark.parametrize("stop_at", [2, 3, 4])
def test_resume_from_middle_matches_uninterrupted(tmp_path, tiny_data, tiny_teacher, stop_at):
    full = _student_bytes(tmp_path, "full.ddck", tiny_data, tiny_teacher.model)
    _student_bytes(tmp_path, "half.ddck", tiny_data, tiny_teacher.model, stop_at=stop_at)
    resumed = _student_bytes(tmp_path, "resumed.ddck", tiny_data, tiny_teacher.model,
                             resume=tmp_path / "half.ddck")
    assert resumed == full
