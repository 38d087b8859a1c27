"""Central-difference gradient checker."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Dict, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from ..errors import GradcheckError
from .tensor import Tensor

Params = Union[Mapping[str, Tensor], Sequence[Tensor]]


@dataclass
class GradcheckReport:
    errors: Dict[str, float] = field(default_factory=dict)
    checked: Dict[str, int] = field(default_factory=dict)
    worst: Optional[Tuple[str, tuple, float, float]] = None  # name, index, tape, numeric

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_error < tol

    def summary(self) -> str:
        lines = [f"{name}: max rel err {err:.3e} over {self.checked[name]} entries"
                 for name, err in self.errors.items()]
        if self.worst is not None:
            name, idx, a, n = self.worst
            lines.append(f"worst: {name}{list(idx)} tape={a:.8e} numeric={n:.8e}")
        return "\n".join(lines)


def _scalar(value: Tensor) -> float:
    v = float(np.asarray(value.data).reshape(-1)[0])
    if not np.isfinite(v):
        raise GradcheckError(f"loss is not finite ({v}); gradient check aborted")
    return v


def gradcheck(f: Callable[[], Tensor], params: Params, eps: float = 1e-5,
              floor: float = 1e-8, max_entries: Optional[int] = None,
              seed: int = 0) -> GradcheckReport:
    """Compare tape gradients of scalar ``f()`` against central differences.

    The error for a parameter is ``max|tape - numeric|`` divided by the
    largest gradient magnitude of that parameter (floored at ``floor``).
    ``f`` must be deterministic and should run in float64.  When
    ``max_entries`` is set, large parameters are checked on a fixed random
    subset of entries.
    """
    named = dict(params) if isinstance(params, Mapping) else {f"p{i}": p for i, p in enumerate(params)}
    for p in named.values():
        p.requires_grad = True
        p.grad = None
    loss = f()
    _scalar(loss)
    loss.backward()
    tape = {name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data)) for name, p in named.items()}

    report = GradcheckReport()
    rng = np.random.default_rng(seed)
    worst_err = -1.0
    for name, p in named.items():
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        analytic = tape[name].reshape(-1)[idx]
        numeric = np.empty(len(idx))
        for j, i in enumerate(idx):
            orig = flat[i]
            flat[i] = orig + eps
            up = _scalar(f())
            flat[i] = orig - eps
            down = _scalar(f())
            flat[i] = orig
            numeric[j] = (up - down) / (2 * eps)
        if len(idx) == 0:
            report.errors[name], report.checked[name] = 0.0, 0
            continue
        # deviation measured against this parameter's gradient scale
        scale = max(np.abs(analytic).max(), np.abs(numeric).max(), floor)
        dev = np.abs(analytic - numeric)
        j = int(dev.argmax())
        err = float(dev[j] / scale)
        report.errors[name] = err
        report.checked[name] = len(idx)
        if err > worst_err:
            worst_err = err
            where = tuple(int(v) for v in np.unravel_index(idx[j], p.shape))
            report.worst = (name, where, float(analytic[j]), float(numeric[j]))
    return report


def projection_loss(out: Tensor, seed: int = 0) -> Tensor:
    """``sum(out * R)`` for a fixed random ``R``; an O(1) scalar probe of ``out``."""
    from . import ops

    r = np.random.default_rng(seed).uniform(-1.0, 1.0, out.shape) / np.sqrt(max(out.size, 1))
    return ops.sum(ops.mul(out, Tensor(r.astype(out.dtype))))
