"""Module tree, parameters and named parameter collections."""

from __future__ import annotations

import hashlib
from collections import OrderedDict
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Tuple

import numpy as np

from ..core.tensor import Tensor, get_default_dtype


class Parameter(Tensor):
    """A leaf tensor owned by a module.  ``frozen`` parameters take no gradient."""

    __slots__ = ()

    def __init__(self, data, frozen: bool = False):
        super().__init__(np.asarray(data, dtype=get_default_dtype()), requires_grad=not frozen)

    @property
    def frozen(self) -> bool:
        return not self.requires_grad

    @frozen.setter
    def frozen(self, value: bool) -> None:
        self.requires_grad = not value
        if value:
            self.grad = None


class Module:
    training: bool = True

    def __init__(self):
        object.__setattr__(self, "_buffers", OrderedDict())
        object.__setattr__(self, "training", True)

    def register_buffer(self, name: str, value: np.ndarray) -> None:
        self._buffers[name] = np.ascontiguousarray(value)

    def __getattr__(self, name):
        buffers = self.__dict__.get("_buffers")
        if buffers is not None and name in buffers:
            return buffers[name]
        raise AttributeError(f"{type(self).__name__} has no attribute {name!r}")

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    # -- traversal ------------------------------------------------------------
    def named_children(self) -> Iterator[Tuple[str, "Module"]]:
        for name, value in vars(self).items():
            if isinstance(value, Module):
                yield name, value
            elif isinstance(value, (list, tuple)) and value and all(isinstance(v, Module) for v in value):
                for i, v in enumerate(value):
                    yield f"{name}.{i}", v

    def named_modules(self, prefix: str = "") -> Iterator[Tuple[str, "Module"]]:
        yield prefix, self
        for name, child in self.named_children():
            yield from child.named_modules(f"{prefix}.{name}" if prefix else name)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield (f"{prefix}.{name}" if prefix else name), value
        for name, child in self.named_children():
            yield from child.named_parameters(f"{prefix}.{name}" if prefix else name)

    def parameters(self) -> List[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[Tuple[str, np.ndarray]]:
        for name, value in self._buffers.items():
            yield (f"{prefix}.{name}" if prefix else name), value
        for name, child in self.named_children():
            yield from child.named_buffers(f"{prefix}.{name}" if prefix else name)

    def num_parameters(self) -> int:
        return int(sum(p.size for p in self.parameters()))

    # -- modes ----------------------------------------------------------------
    def train(self, mode: bool = True) -> "Module":
        for _, m in self.named_modules():
            object.__setattr__(m, "training", mode)
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def freeze(self) -> "Module":
        for p in self.parameters():
            p.frozen = True
        return self

    def unfreeze(self) -> "Module":
        for p in self.parameters():
            p.frozen = False
        return self

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    # -- state ----------------------------------------------------------------
    def state_dict(self, prefix: str = "") -> "OrderedDict[str, np.ndarray]":
        state = OrderedDict((n, p.data) for n, p in self.named_parameters(prefix))
        state.update(self.named_buffers(prefix))
        return state

    def load_state_dict(self, state: Mapping[str, np.ndarray], prefix: str = "", strict: bool = True) -> None:
        own = dict(self.named_parameters(prefix))
        bufs = dict(self.named_buffers(prefix))
        missing = [n for n in list(own) + list(bufs) if n not in state]
        if strict and missing:
            raise KeyError(f"missing entries in state: {missing[:5]}{'...' if len(missing) > 5 else ''}")
        for name, p in own.items():
            if name in state:
                src = np.asarray(state[name])
                if src.shape != p.shape:
                    raise ValueError(f"{name}: shape {src.shape} does not match {p.shape}")
                p.data[...] = src
        for name, buf in bufs.items():
            if name in state:
                buf[...] = state[name]

    def copy_from(self, other: "Module") -> None:
        """Overwrite parameters and buffers with ``other``'s, entry by entry."""
        for (na, a), (nb, b) in zip(self.named_parameters(), other.named_parameters(), strict=True):
            if na != nb or a.shape != b.shape:
                raise ValueError(f"structure mismatch: {na}{a.shape} vs {nb}{b.shape}")
            np.copyto(a.data, b.data)
        for (_, a), (_, b) in zip(self.named_buffers(), other.named_buffers(), strict=True):
            np.copyto(a, b)

    def astype(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        for _, m in self.named_modules():
            for k, v in m._buffers.items():
                m._buffers[k] = v.astype(dtype)
        return self


def checksum(arrays: Iterable[np.ndarray]) -> str:
    h = hashlib.sha256()
    for a in arrays:
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def module_checksum(module: Module, include_buffers: bool = True) -> str:
    arrays = [p.data for p in module.parameters()]
    if include_buffers:
        arrays += [b for _, b in module.named_buffers()]
    return checksum(arrays)


class ParameterStore:
    """Ordered name -> parameter map spanning several modules.

    Names are hierarchical (``student.enc.stage2.conv1.conv.local.w``), and the
    store is what the optimizer and checkpoint code iterate over.
    """

    def __init__(self, modules: Optional[Mapping[str, Module]] = None):
        self._params: "OrderedDict[str, Parameter]" = OrderedDict()
        self._modules: "OrderedDict[str, Module]" = OrderedDict()
        for prefix, module in (modules or {}).items():
            self.add(prefix, module)

    def add(self, prefix: str, module: Module) -> None:
        self._modules[prefix] = module
        for name, p in module.named_parameters(prefix):
            if name in self._params:
                raise KeyError(f"duplicate parameter name {name}")
            self._params[name] = p

    def __getitem__(self, name: str) -> Parameter:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __iter__(self):
        return iter(self._params)

    def __len__(self) -> int:
        return len(self._params)

    def items(self):
        return self._params.items()

    def trainable(self) -> "OrderedDict[str, Parameter]":
        return OrderedDict((n, p) for n, p in self._params.items() if not p.frozen)

    def frozen_flags(self) -> Dict[str, bool]:
        return {n: p.frozen for n, p in self._params.items()}

    def state(self) -> "OrderedDict[str, np.ndarray]":
        out: "OrderedDict[str, np.ndarray]" = OrderedDict()
        for prefix, module in self._modules.items():
            out.update(module.state_dict(prefix))
        return out

    def load(self, state: Mapping[str, np.ndarray], strict: bool = True) -> None:
        for prefix, module in self._modules.items():
            module.load_state_dict(state, prefix, strict=strict)

    def checksum(self, prefix: str = "") -> str:
        return checksum(a for n, a in self.state().items() if n.startswith(prefix))

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None
