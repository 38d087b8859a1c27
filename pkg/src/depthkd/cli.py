"""Command-line entry point: ``depthkd <command> ...``.

Exit status: 0 on success, 2 for configuration errors, 3 for numeric
divergence, 4 for malformed or mismatched files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .errors import ConfigError, DepthKDError


def _config(args):
    from .train.config import TrainConfig
    return TrainConfig.load(args.config) if args.config else TrainConfig()


def cmd_gen_data(args) -> int:
    from .data.dataset import write_splits
    from .data.synth import SceneSpec
    if args.spec:
        try:
            spec = SceneSpec.from_dict(json.loads(Path(args.spec).read_text()))
        except (OSError, json.JSONDecodeError, TypeError) as exc:
            raise ConfigError(f"{args.spec}: cannot read scene spec ({exc})") from exc
    else:
        spec = SceneSpec()
    if args.seed is not None:
        spec.seed = args.seed
    spec.validate()
    out = write_splits(spec, args.out)
    print(json.dumps({"out": str(out), "n_train": spec.n_train, "n_val": spec.n_val}))
    return 0


def cmd_train_teacher(args) -> int:
    from .train.loop import train_teacher
    cfg = _config(args)
    changes = {}
    if args.seed is not None:
        changes["teacher_seed"] = args.seed
    if args.data:
        changes["data_dir"] = args.data
    if args.out:
        changes["out_dir"] = args.out
    if args.epochs is not None:
        changes["teacher_epochs"] = args.epochs
    cfg = cfg.with_(**changes).validate()
    if not cfg.out_dir:
        raise ConfigError("train-teacher needs an output directory (--out or out_dir in the config)")
    trainer = train_teacher(cfg)
    print(json.dumps({"checkpoint": str(Path(cfg.out_dir) / "teacher.ddck"), "best": trainer.best_record}))
    return 0


def cmd_train_student(args) -> int:
    from .train.loop import train_student
    cfg = _config(args)
    changes = {}
    for flag in ("lg", "kd", "fam", "lam"):
        if getattr(args, f"no_{flag}"):
            changes[flag] = False
    for name, value in (("seed", args.seed), ("warmup_epochs", args.warmup), ("lambda_kd", args.lambda_kd),
                        ("teacher_ckpt", args.teacher), ("data_dir", args.data), ("out_dir", args.out),
                        ("epochs", args.epochs)):
        if value is not None:
            changes[name] = value
    cfg = cfg.with_(**changes).validate()
    if cfg.kd and not cfg.teacher_ckpt:
        raise ConfigError("distillation is enabled: pass --teacher CKPT (or --no-kd)")
    if not cfg.out_dir:
        raise ConfigError("train-student needs an output directory (--out or out_dir in the config)")
    trainer = train_student(cfg, resume=args.resume)
    report = trainer.evaluate()
    print(json.dumps({"checkpoint": str(Path(cfg.out_dir) / "student.ddck"), "val": report.to_dict()}))
    return 0


def cmd_eval(args) -> int:
    from .data.dataset import load_split
    from .train.loop import evaluate_model, load_model
    model, _ = load_model(args.ckpt)
    report = evaluate_model(model, load_split(args.data, "val"))
    text = report.to_json()
    if args.json:
        Path(args.json).write_text(text + "\n")
    print(text)
    return 0


def cmd_ablation(args) -> int:
    from .train.ablation import run_ablation
    cfg = _config(args)
    changes = {}
    for name, value in (("seed", args.seed), ("teacher_ckpt", args.teacher), ("data_dir", args.data),
                        ("out_dir", args.out)):
        if value is not None:
            changes[name] = value
    cfg = cfg.with_(**changes).validate()
    result = run_ablation(cfg, rows=args.rows, out_dir=cfg.out_dir)
    print(result.summary())
    return 0


def cmd_gradcheck(args) -> int:
    from .gradcheck_suite import CASES, TOLERANCE, run_case
    names = [args.module] if args.module else list(CASES)
    if args.module and args.module not in CASES:
        raise ConfigError(f"unknown module {args.module!r}; choose from {', '.join(CASES)}")
    failed = []
    for name in names:
        report = run_case(name)
        ok = report.passed(TOLERANCE)
        print(f"{'PASS' if ok else 'FAIL'} {name:<12} max rel err {report.max_error:.2e}")
        if not ok:
            print(report.summary())
            failed.append(name)
    return 3 if failed else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="depthkd", description="Cross-architecture distillation for monocular depth.")
    p.add_argument("-q", "--quiet", action="store_true", help="only warnings on stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--seed", type=int, default=None, help="override the run seed")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("gen-data", cmd_gen_data, "write the synthetic train/val splits")
    sp.add_argument("--spec", help="scene spec JSON (default spec when omitted)")
    sp.add_argument("--out", required=True)

    sp = add("train-teacher", cmd_train_teacher, "pretrain the teacher with SILog")
    sp.add_argument("--config")
    sp.add_argument("--data")
    sp.add_argument("--out")
    sp.add_argument("--epochs", type=int)

    sp = add("train-student", cmd_train_student, "train a student, optionally distilled")
    sp.add_argument("--config")
    sp.add_argument("--teacher")
    sp.add_argument("--data")
    sp.add_argument("--out")
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--resume", help="continue from a student checkpoint")
    for flag in ("lg", "kd", "fam", "lam"):
        sp.add_argument(f"--no-{flag}", action="store_true")
    sp.add_argument("--warmup", type=int, help="warmup epochs before the KD term is applied")
    sp.add_argument("--lambda-kd", type=float)

    sp = add("eval", cmd_eval, "evaluate a checkpoint on a val split")
    sp.add_argument("--ckpt", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--json", help="also write the metrics JSON here")

    sp = add("ablation", cmd_ablation, "run the component ablation table")
    sp.add_argument("--config")
    sp.add_argument("--teacher")
    sp.add_argument("--data")
    sp.add_argument("--out")
    sp.add_argument("--rows", nargs="+")

    sp = add("gradcheck", cmd_gradcheck, "float64 gradient checks of the differentiable blocks")
    sp.add_argument("--module")
    return p


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    try:
        return args.fn(args)
    except DepthKDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
