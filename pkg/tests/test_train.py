import json

import numpy as np
import pytest

from conftest import tiny_config
from depthkd.errors import ConfigError, DivergenceError, FingerprintError, FormatError
from depthkd.nn import Parameter
from depthkd.train import Adam, TrainConfig, checkpoint, linear_lr, load_model, train_student
from depthkd.train.loop import StudentTrainer, _check_finite, evaluate_model


# -- schedule and optimizer ----------------------------------------------------------

def test_linear_lr_endpoints():
    assert linear_lr(0, 10, 1e-3, 1e-4) == 1e-3
    assert linear_lr(9, 10, 1e-3, 1e-4) == pytest.approx(1e-4, rel=1e-12)
    assert linear_lr(0, 1, 1e-3, 1e-4) == 1e-3


def test_adam_first_step_closed_form():
    # bias correction makes the first update -lr * g / (|g| + eps)
    p = Parameter(np.array([0.5, -1.0, 2.0]))
    p.grad = np.array([0.3, -2.0, 1e-3], dtype=p.dtype)
    Adam({"p": p}, eps=1e-8).step(0.01)
    expected = np.array([0.5, -1.0, 2.0]) - 0.01 * p.grad / (np.abs(p.grad) + 1e-8)
    np.testing.assert_allclose(p.data, expected, rtol=1e-6)


def test_adam_weight_decay_is_decoupled():
    p = Parameter(np.array([2.0]))
    p.grad = np.zeros(1, dtype=p.dtype)
    Adam({"p": p}, weight_decay=0.1).step(0.5)
    assert p.data[0] == pytest.approx(2.0 * (1 - 0.05))


def test_frozen_parameter_untouched_by_many_steps(rng):
    live, frozen = Parameter(rng.normal(size=4)), Parameter(rng.normal(size=4), frozen=True)
    before = frozen.data.copy()
    opt = Adam({"live": live, "frozen": frozen}, weight_decay=0.01)
    for _ in range(100):
        live.grad = rng.normal(size=4).astype(live.dtype)
        frozen.grad = rng.normal(size=4).astype(frozen.dtype)  # ignored
        opt.step(1e-2)
    assert frozen.data.tobytes() == before.tobytes()


def test_adam_state_round_trip_continues_identically(rng):
    grads = [rng.normal(size=3).astype(np.float32) for _ in range(6)]
    a = Parameter(np.ones(3))
    opt_a = Adam({"a": a})
    for g in grads[:3]:
        a.grad = g
        opt_a.step(1e-2)
    b = Parameter(a.data.copy())
    opt_b = Adam({"a": b})
    opt_b.load(opt_a.state("x."), "x.")
    for g in grads[3:]:
        a.grad, b.grad = g, g.copy()
        opt_a.step(1e-2)
        opt_b.step(1e-2)
    assert a.data.tobytes() == b.data.tobytes()


# -- checkpoint container ----------------------------------------------------------

def _tensors():
    return {"w": np.arange(6, dtype=np.float32).reshape(2, 3), "t": np.array([3.0])}


def test_checkpoint_round_trip(tmp_path):
    path = checkpoint.save(tmp_path / "a.ddck", "fp:1", {"kind": "x", "n": 2}, _tensors())
    ck = checkpoint.load(path, "fp:1")
    assert ck.fingerprint == "fp:1" and ck.meta == {"kind": "x", "n": 2}
    assert list(ck.tensors) == ["w", "t"]
    np.testing.assert_array_equal(ck.tensors["w"], _tensors()["w"])
    assert path.read_bytes()[:4] == b"DDCK"


def test_checkpoint_errors(tmp_path):
    buf = checkpoint.encode("fp", {}, _tensors())
    (tmp_path / "a.ddck").write_bytes(buf)
    with pytest.raises(FingerprintError):
        checkpoint.load(tmp_path / "a.ddck", "other")
    with pytest.raises(FormatError, match="magic"):
        checkpoint.decode(b"NOPE" + buf[4:], "mem")
    with pytest.raises(FormatError, match="version"):
        checkpoint.decode(buf[:4] + (7).to_bytes(4, "little") + buf[8:], "mem")
    with pytest.raises(FormatError):
        checkpoint.decode(buf[:-5], "mem")
    with pytest.raises(FormatError):
        checkpoint.decode(buf + b"\0", "mem")
    with pytest.raises(FormatError):
        checkpoint.load(tmp_path / "missing.ddck")


# -- config ----------------------------------------------------------------------------

def test_config_json_round_trip(tmp_path):
    cfg = tiny_config(seed=3)
    path = tmp_path / "cfg.json"
    path.write_text(cfg.to_json())
    assert TrainConfig.load(path) == cfg
    assert TrainConfig.load(path).loss.lambda_kd == cfg.lambda_kd


@pytest.mark.parametrize("changes", [dict(warmup_epochs=5, epochs=5), dict(lr_end=1e-2, lr_start=1e-3),
                                     dict(beta2=1.0), dict(lambda_kd=-0.1), dict(epochs=0)])
def test_config_validation(changes):
    with pytest.raises(ConfigError):
        tiny_config(**changes).validate()


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="bogus"):
        TrainConfig.from_dict({"bogus": 1})
    with pytest.raises(ConfigError):
        TrainConfig.from_dict({"model": {"student_widths": [1, 2]}})


def test_non_finite_loss_raises_divergence():
    with pytest.raises(DivergenceError, match="iteration 7"):
        _check_finite("loss", float("nan"), 0, 7)


# -- trainer behaviour -----------------------------------------------------------------

def test_fam_and_lam_flags_do_nothing_without_kd(tiny_data):
    a = train_student(tiny_config(kd=False), None, *tiny_data)
    b = train_student(tiny_config(kd=False, fam=False, lam=False), None, *tiny_data)
    sa, sb = a.store.state(), b.store.state()
    assert list(sa) == list(sb) and all(k.startswith("student.") for k in sa)
    assert all(sa[k].tobytes() == sb[k].tobytes() for k in sa)


def test_student_rejects_mismatched_teacher(tiny_teacher):
    cfg = tiny_config()
    cfg.model.teacher_heads = 1
    with pytest.raises(FingerprintError):
        StudentTrainer(cfg, tiny_teacher.train_set, tiny_teacher.val_set, teacher=tiny_teacher.model)


def test_teacher_checkpoint_reproduces_best_val_record(tmp_path, tiny_teacher):
    path = tiny_teacher.save_best(tmp_path / "teacher.ddck")
    model, ck = load_model(path)
    report = evaluate_model(model, tiny_teacher.val_set)
    assert report.rmse == ck.meta["val"]["rmse"] == tiny_teacher.best_record["rmse"]


def test_teacher_only_kept_best_epoch(tiny_teacher):
    rmses = [r["val_rmse"] for r in tiny_teacher.history]
    assert tiny_teacher.best_record["rmse"] == min(rmses)
    assert tiny_teacher.best_record["epoch"] == 1 + int(np.argmin(rmses))


def test_student_checkpoint_loads_for_eval(tmp_path, tiny_data, tiny_teacher):
    trainer = train_student(tiny_config(), tiny_teacher.model, *tiny_data, out_dir=tmp_path)
    model, ck = load_model(tmp_path / "student.ddck")
    assert ck.meta["kind"] == "student" and ck.meta["iteration"] == trainer.total_iterations
    assert evaluate_model(model, tiny_data[1]).to_json() == trainer.evaluate().to_json()
    history = [json.loads(line) for line in (tmp_path / "student_metrics.jsonl").read_text().splitlines()]
    assert [r["epoch"] for r in history] == [1, 2]
    assert "kd" not in history[0] or history[0]["loss"] == history[0]["task"]


def test_feature_cache_matches_live_teacher(tiny_data, tiny_teacher):
    cached = train_student(tiny_config(), tiny_teacher.model, *tiny_data)
    live = train_student(tiny_config(cache_teacher_features=False), tiny_teacher.model, *tiny_data)
    for k, v in cached.store.state().items():
        np.testing.assert_allclose(v, live.store.state()[k], rtol=1e-5, atol=1e-6)
