"""Differentiable operations on :class:`Tensor`.

Each op computes its forward value with numpy and registers a closure that
maps the output gradient to one gradient per parent (``None`` for parents
that need none).  Image-like ops take ``N x C x H x W`` batches; a bare
``C x H x W`` input is treated as a batch of one and returned unbatched.
"""

from __future__ import annotations

import contextlib
from typing import Iterator, Optional, Sequence

import numpy as np

from ..errors import DomainError, ParameterError, ShapeError
from .tensor import Tensor

_make = Tensor._from_op

# optional multiply counter used for cost accounting (see ``count_multiplies``)
_MUL_COUNTER: Optional[list] = None


@contextlib.contextmanager
def count_multiplies() -> Iterator[list]:
    """Count scalar multiplies issued by conv2d, matmul and elementwise mul."""
    global _MUL_COUNTER
    previous = _MUL_COUNTER
    _MUL_COUNTER = [0]
    try:
        yield _MUL_COUNTER
    finally:
        _MUL_COUNTER = previous


def _count(n) -> None:
    if _MUL_COUNTER is not None:
        _MUL_COUNTER[0] += int(n)


def _lift(x, like: Optional[Tensor] = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


def unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# -- elementwise arithmetic ----------------------------------------------------

def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data + b.data

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _make(out, (a, b), backward)


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data - b.data

    def backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _make(out, (a, b), backward)


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data * b.data
    _count(out.size)

    def backward(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), backward)


def div(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    out = a.data / b.data

    def backward(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (-g,))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    out = np.where(mask, x.data, 0).astype(x.dtype, copy=False)
    return _make(out, (x,), lambda g: (g * mask,))


def sigmoid(x: Tensor) -> Tensor:
    # split by sign so exp never overflows
    z = np.exp(-np.abs(x.data))
    out = np.where(x.data >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype, copy=False)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def gelu(x: Tensor) -> Tensor:
    """tanh approximation of GELU."""
    c = np.sqrt(2.0 / np.pi)
    x2 = x.data * x.data
    u = c * x.data * (1.0 + 0.044715 * x2)
    t = np.tanh(u)
    out = 0.5 * x.data * (1.0 + t)

    def backward(g):
        du = c * (1.0 + 3 * 0.044715 * x2)
        return (g * (0.5 * (1.0 + t) + 0.5 * x.data * (1.0 - t * t) * du),)

    return _make(out.astype(x.dtype, copy=False), (x,), backward)


def exp(x: Tensor) -> Tensor:
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x: Tensor) -> Tensor:
    if np.any(x.data <= 0):
        raise DomainError(f"log of non-positive value (min {x.data.min():.3g}); clamp inputs first")
    out = np.log(x.data)
    return _make(out, (x,), lambda g: (g / x.data,))


def sqrt(x: Tensor) -> Tensor:
    if np.any(x.data < 0):
        raise DomainError(f"sqrt of negative value (min {x.data.min():.3g})")
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,))


def clamp_min(x: Tensor, lo: float) -> Tensor:
    mask = x.data >= lo
    out = np.where(mask, x.data, lo).astype(x.dtype, copy=False)
    return _make(out, (x,), lambda g: (g * mask,))


# -- reductions ----------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    axes = _norm_axis(axis, x.ndim)
    out = np.asarray(x.data.sum(axis=axes, keepdims=keepdims))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(out, (x,), backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    out = np.asarray(x.data.mean(axis=axes, keepdims=keepdims))

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return _make(out, (x,), backward)


def sum_sq(x: Tensor) -> Tensor:
    out = np.asarray(np.sum(x.data * x.data))
    return _make(out, (x,), lambda g: (2.0 * g * x.data,))


# -- shape manipulation --------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    out = x.data.reshape(shape)
    return _make(out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes=None) -> Tensor:
    out = np.ascontiguousarray(np.transpose(x.data, axes))
    inverse = None if axes is None else tuple(np.argsort(axes))
    return _make(out, (x,), lambda g: (np.ascontiguousarray(np.transpose(g, inverse)),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(None), type(Ellipsis))) for i in items)


def getitem(x: Tensor, index) -> Tensor:
    if isinstance(index, Tensor):
        index = index.data
    out = np.ascontiguousarray(x.data[index])
    basic = _is_basic_index(index)

    def backward(g):
        full = np.zeros_like(x.data)
        if basic or (isinstance(index, np.ndarray) and index.dtype == bool):
            full[index] += g
        else:
            np.add.at(full, index, g)
        return (full,)

    return _make(out, (x,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    ref = tensors[0]
    axis = axis % ref.ndim
    for t in tensors[1:]:
        if t.ndim != ref.ndim or any(
            t.shape[d] != ref.shape[d] for d in range(ref.ndim) if d != axis
        ):
            raise ShapeError(f"concat: incompatible shapes {ref.shape} and {t.shape} on axis {axis}")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def backward(g):
        parts = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(bounds[i], bounds[i + 1])
            parts.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(parts)

    return _make(out, tensors, backward)


def broadcast_to(x: Tensor, shape) -> Tensor:
    out = np.ascontiguousarray(np.broadcast_to(x.data, shape))
    return _make(out, (x,), lambda g: (unbroadcast(g, x.shape),))


# -- linear algebra ------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = _lift(a)
    b = _lift(b, a)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply shapes {a.shape} and {b.shape}")
    out = np.matmul(a.data, b.data)
    _count(out.size * a.shape[-1])

    def backward(g):
        ga = gb = None
        if a.requires_grad:
            ga = unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            gb = unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return _make(out, (a, b), backward)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), backward)


def attention(q: Tensor, k: Tensor, v: Tensor, scale: float) -> Tensor:
    """Fused ``softmax(q k^T * scale) v`` over the last two axes.

    The probability matrix is exposed through :func:`last_attention_probs`.
    """
    global _LAST_PROBS
    qs = q.data * scale
    s = np.matmul(qs, np.swapaxes(k.data, -1, -2))
    _count(s.size * q.shape[-1])
    s -= s.max(axis=-1, keepdims=True)
    np.exp(s, out=s)
    s /= s.sum(axis=-1, keepdims=True)
    probs = s
    out = np.matmul(probs, v.data)
    _count(out.size * probs.shape[-1])
    _LAST_PROBS = probs

    def backward(g):
        dv = np.matmul(np.swapaxes(probs, -1, -2), g)
        # sum_j P_ij dP_ij == g_i . out_i, so the row correction never touches N x N data
        row = (g * out).sum(axis=-1, keepdims=True)
        ds = np.matmul(g, np.swapaxes(v.data, -1, -2))
        ds -= row
        ds *= probs
        dq = np.matmul(ds, k.data)
        dq *= scale
        dk = np.matmul(np.swapaxes(ds, -1, -2), qs)
        return dq, dk, dv

    return _make(out, (q, k, v), backward)


_LAST_PROBS: Optional[np.ndarray] = None


def last_attention_probs() -> Optional[np.ndarray]:
    return _LAST_PROBS


# -- image ops -----------------------------------------------------------------

def _batched(x: Tensor):
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected C x H x W or N x C x H x W, got shape {x.shape}")
    return x, False


def conv2d(x: Tensor, w: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation via im2col; ``w`` is ``C_out x C_in x k x k``."""
    if stride < 1 or padding < 0:
        raise ParameterError(f"conv2d: invalid stride={stride} / padding={padding}")
    x, squeeze = _batched(x)
    n, c, h, wd = x.shape
    c_out, c_in, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ParameterError(f"conv2d: kernel must be square and odd, got {k}x{k2}")
    if c != c_in:
        raise ShapeError(f"conv2d: input shape {x.shape} does not match weight shape {w.shape}")
    if h + 2 * padding < k or wd + 2 * padding < k:
        raise ParameterError(f"conv2d: input {h}x{wd} with padding {padding} smaller than kernel {k}")
    ho = (h + 2 * padding - k) // stride + 1
    wo = (wd + 2 * padding - k) // stride + 1

    if k == 1 and padding == 0:
        xs = x.data[:, :, ::stride, ::stride] if stride > 1 else x.data
        cols = np.ascontiguousarray(xs.transpose(0, 2, 3, 1)).reshape(-1, c)
    else:
        xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
        cols6 = np.empty((n, ho, wo, c, k, k), dtype=x.dtype)
        for i in range(k):
            for j in range(k):
                cols6[..., i, j] = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride].transpose(0, 2, 3, 1)
        cols = cols6.reshape(n * ho * wo, c * k * k)
    w2 = w.data.reshape(c_out, -1)
    _count(n * ho * wo * c_out * c * k * k)
    out = cols @ w2.T
    if bias is not None:
        out += bias.data
    out = np.ascontiguousarray(out.reshape(n, ho, wo, c_out).transpose(0, 3, 1, 2))

    def backward(g):
        gm = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, c_out)
        gx = gw = gb = None
        if w.requires_grad:
            gw = (gm.T @ cols).reshape(w.shape)
        if bias is not None and bias.requires_grad:
            gb = gm.sum(axis=0)
        if x.requires_grad:
            gcols = gm @ w2
            if k == 1 and padding == 0:
                gx = np.zeros_like(x.data)
                gx[:, :, ::stride, ::stride] = gcols.reshape(n, ho, wo, c).transpose(0, 3, 1, 2)
            else:
                gcols = gcols.reshape(n, ho, wo, c, k, k)
                gxp = np.zeros((n, c, h + 2 * padding, wd + 2 * padding), dtype=x.dtype)
                for i in range(k):
                    for j in range(k):
                        gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[..., i, j].transpose(0, 3, 1, 2)
                gx = gxp[:, :, padding:padding + h, padding:padding + wd] if padding else gxp
                gx = np.ascontiguousarray(gx)
        return (gx, gw) if bias is None else (gx, gw, gb)

    parents = (x, w) if bias is None else (x, w, bias)
    y = _make(out, parents, backward)
    return reshape(y, y.shape[1:]) if squeeze else y


def avgpool_global(x: Tensor) -> Tensor:
    """Per-channel spatial mean, keeping 1x1 spatial dims."""
    if x.shape[-1] < 1 or x.shape[-2] < 1:
        raise ShapeError(f"avgpool_global: empty spatial dims in {x.shape}")
    return mean(x, axis=(-2, -1), keepdims=True)


def upsample_nearest(x: Tensor, factor: int = 2) -> Tensor:
    if factor == 1:
        return x
    out = np.repeat(np.repeat(x.data, factor, axis=-2), factor, axis=-1)
    h, w = x.shape[-2:]

    def backward(g):
        g = g.reshape(g.shape[:-2] + (h, factor, w, factor))
        return (g.sum(axis=(-3, -1)),)

    return _make(out, (x,), backward)


def resize_nearest(x: Tensor, size) -> Tensor:
    """Nearest-neighbour resize of the last two axes to ``size``."""
    h, w = x.shape[-2:]
    ho, wo = size
    if (ho, wo) == (h, w):
        return x
    if ho % h == 0 and wo % w == 0 and ho // h == wo // w:
        return upsample_nearest(x, ho // h)
    rows = (np.arange(ho) * h) // ho
    cols = (np.arange(wo) * w) // wo
    index = (Ellipsis, rows[:, None], cols[None, :])
    out = np.ascontiguousarray(x.data[index])

    def backward(g):
        full = np.zeros_like(x.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(out, (x,), backward)


# -- normalisation -------------------------------------------------------------

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Batch norm over (N, H, W) per channel; updates running stats in place when training."""
    x4, squeeze = _batched(x)
    shape = (1, -1, 1, 1)
    if training:
        m = x4.shape[0] * x4.shape[2] * x4.shape[3]
        mu = x4.data.mean(axis=(0, 2, 3))
        var = x4.data.var(axis=(0, 2, 3))
        unbiased = var * (m / max(m - 1, 1))
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * unbiased
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x4.data - mu.reshape(shape)) * inv.reshape(shape)
    out = (gamma.data.reshape(shape) * xhat + beta.data.reshape(shape)).astype(x4.dtype, copy=False)

    def backward(g):
        gg = (g * xhat).sum(axis=(0, 2, 3)) if gamma.requires_grad else None
        gb = g.sum(axis=(0, 2, 3)) if beta.requires_grad else None
        gx = None
        if x4.requires_grad:
            dxhat = g * gamma.data.reshape(shape)
            if training:
                gx = inv.reshape(shape) * (
                    dxhat
                    - dxhat.mean(axis=(0, 2, 3), keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=(0, 2, 3), keepdims=True)
                )
            else:
                gx = dxhat * inv.reshape(shape)
        return gx, gg, gb

    y = _make(out, (x4, gamma, beta), backward)
    return reshape(y, y.shape[1:]) if squeeze else y


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis."""
    mu = x.data.mean(axis=-1, keepdims=True)
    var = x.data.var(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    out = gamma.data * xhat + beta.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        gg = (g * xhat).sum(axis=lead) if gamma.requires_grad else None
        gb = g.sum(axis=lead) if beta.requires_grad else None
        dxhat = g * gamma.data
        gx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True) - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return gx, gg, gb

    return _make(out, (x, gamma, beta), backward)
