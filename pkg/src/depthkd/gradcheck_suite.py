"""Float64 gradient checks for every differentiable block, keyed by name.

Each case builds a small instance with fixed seeds and compares tape
gradients of a random projection of the block's output against central
differences.  Biases that cancel structurally (e.g. ahead of a train-mode
batch norm) are avoided so every checked gradient is informative.
"""

from __future__ import annotations

from collections import OrderedDict
from typing import Callable, Dict

import numpy as np

from .core import ops
from .core.gradcheck import GradcheckReport, gradcheck, projection_loss
from .core.tensor import Tensor, default_dtype

TOLERANCE = 1e-4
MAX_ENTRIES = 24


def _leaf(rng, shape, lo=-1.0, hi=1.0) -> Tensor:
    return Tensor(rng.uniform(lo, hi, shape), requires_grad=True)


def _params(module, **inputs) -> Dict[str, Tensor]:
    named = OrderedDict(inputs)
    named.update(module.named_parameters())
    return named


def _merge(*reports: GradcheckReport) -> GradcheckReport:
    out = GradcheckReport()
    for i, r in enumerate(reports):
        for name, err in r.errors.items():
            out.errors[f"{i}.{name}"] = err
            out.checked[f"{i}.{name}"] = r.checked[name]
        if r.worst is not None and (out.worst is None or r.max_error >= out.max_error):
            out.worst = r.worst
    return out


def case_conv2d() -> GradcheckReport:
    rng = np.random.default_rng(1)
    reports = []
    for k, stride, pad in ((3, 1, 1), (3, 2, 1), (1, 2, 0)):
        x, w, b = _leaf(rng, (2, 3, 6, 6)), _leaf(rng, (4, 3, k, k)), _leaf(rng, (4,))
        reports.append(gradcheck(lambda: projection_loss(ops.conv2d(x, w, b, stride, pad)),
                                 {"x": x, "w": w, "b": b}, max_entries=MAX_ENTRIES))
    return _merge(*reports)


def case_batchnorm() -> GradcheckReport:
    from .nn import BatchNorm2d
    rng = np.random.default_rng(2)
    bn = BatchNorm2d(3)
    bn.gamma.data[...] = rng.uniform(0.5, 1.5, 3)
    bn.beta.data[...] = rng.uniform(-0.5, 0.5, 3)
    x = _leaf(rng, (4, 3, 3, 3))
    mean0, var0 = bn.running_mean.copy(), bn.running_var.copy()

    def f():
        # running statistics are side effects; reset so every evaluation is identical
        bn.running_mean[...] = mean0
        bn.running_var[...] = var0
        return projection_loss(bn(x))

    return gradcheck(f, _params(bn, x=x), max_entries=MAX_ENTRIES)


def case_softmax() -> GradcheckReport:
    rng = np.random.default_rng(3)
    x = _leaf(rng, (3, 6), -2.0, 2.0)
    return gradcheck(lambda: projection_loss(ops.softmax(x, axis=-1)), {"x": x})


def case_transformer() -> GradcheckReport:
    from .nn import TransformerBlock
    rng = np.random.default_rng(4)
    block = TransformerBlock(8, heads=2, mlp_ratio=2, rng=rng)
    x = _leaf(rng, (2, 5, 8))
    return gradcheck(lambda: projection_loss(block(x)), _params(block, x=x), max_entries=MAX_ENTRIES)


def case_lgconv() -> GradcheckReport:
    from .nn import Conv2d, LgConv
    rng = np.random.default_rng(5)
    # gamma0 = 1 so the global branch carries gradients of the same order as the local conv
    lg = LgConv(Conv2d(4, 4, 3, rng=rng), heads=2, gamma0=1.0, rng=rng)
    x = _leaf(rng, (2, 4, 6, 6))
    return gradcheck(lambda: projection_loss(lg(x)), _params(lg, x=x), max_entries=MAX_ENTRIES)


def case_lam() -> GradcheckReport:
    from .nn import Lam
    rng = np.random.default_rng(6)
    lam = Lam(4, rng=rng)
    x = _leaf(rng, (2, 4, 3, 3))

    def f():
        weighted, a = lam(x)
        return ops.add(projection_loss(weighted, seed=1), projection_loss(a, seed=2))

    return gradcheck(f, _params(lam, x=x), max_entries=MAX_ENTRIES)


def case_decoder() -> GradcheckReport:
    from .models import DepthDecoder, ModelConfig
    rng = np.random.default_rng(7)
    cfg = ModelConfig(student_widths=(3, 4, 4, 6), decoder_channels=4, n_bins=4)
    dec = DepthDecoder(cfg.student_widths, cfg, rng=rng)
    feats = [_leaf(rng, (2, c, 8 // 2 ** i, 8 // 2 ** i), 0.0, 1.0) for i, c in enumerate(cfg.student_widths)]
    inputs = {f"f{i}": f for i, f in enumerate(feats)}
    return gradcheck(lambda: projection_loss(dec(feats).depth), _params(dec, **inputs), max_entries=MAX_ENTRIES)


def case_bins() -> GradcheckReport:
    from .models import bins_from_logits, depth_from_bins
    rng = np.random.default_rng(8)
    # logits kept away from the relu kink
    logits = Tensor(rng.choice([-1.0, 1.0], (2, 5)) * rng.uniform(0.2, 1.5, (2, 5)), requires_grad=True)
    scores = _leaf(rng, (2, 5, 3, 3))

    def f():
        _, centers = bins_from_logits(logits, 0.25, 10.0)
        depth = depth_from_bins(ops.softmax(scores, axis=1), centers, upsample=2)
        return ops.add(projection_loss(depth, seed=1), projection_loss(centers, seed=2))

    return gradcheck(f, {"logits": logits, "scores": scores})


def case_silog() -> GradcheckReport:
    from .losses import silog
    rng = np.random.default_rng(9)
    pred = Tensor(rng.uniform(0.5, 5.0, (2, 1, 4, 4)), requires_grad=True)
    gt = rng.uniform(0.5, 5.0, (2, 1, 4, 4))
    mask = rng.random((2, 1, 4, 4)) < 0.7
    return gradcheck(lambda: silog(pred, gt, mask), {"pred": pred})


def case_kd() -> GradcheckReport:
    from .losses import attentive_kd
    rng = np.random.default_rng(10)
    fs = [_leaf(rng, (2, 3, 4, 4)), _leaf(rng, (2, 5, 2, 2))]
    ft = [Tensor(rng.uniform(-1, 1, f.shape)) for f in fs]
    a = [_leaf(rng, (2, 4, 4), 0.2, 2.0), _leaf(rng, (2, 2, 2), 0.2, 2.0)]
    return gradcheck(lambda: attentive_kd(fs, ft, a), {"fs0": fs[0], "fs1": fs[1], "a0": a[0], "a1": a[1]})


CASES: "OrderedDict[str, Callable[[], GradcheckReport]]" = OrderedDict([
    ("conv2d", case_conv2d),
    ("batchnorm", case_batchnorm),
    ("softmax", case_softmax),
    ("transformer", case_transformer),
    ("lgconv", case_lgconv),
    ("lam", case_lam),
    ("decoder", case_decoder),
    ("bins", case_bins),
    ("silog", case_silog),
    ("kd", case_kd),
])


def run_case(name: str) -> GradcheckReport:
    if name not in CASES:
        raise KeyError(f"unknown gradcheck module {name!r}; choose from {', '.join(CASES)}")
    with default_dtype(np.float64):
        return CASES[name]()
