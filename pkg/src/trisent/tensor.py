"""Minimal float32 tensor library with reverse-mode automatic differentiation.

Everything trainable in this package (encoder, heads, losses) is expressed in
terms of the ops below. Forward ops record onto a global gradient tape when
any input requires grad; `backward(loss)` replays the tape in reverse and
accumulates gradients into every reachable tensor that requires grad.

Numerics: float32 storage everywhere, float64 accumulation inside reductions
and matmul inner products (this is what makes finite-difference gradient
checks stable at h=1e-3). Dropout takes an explicit per-call seed so any
forward pass is exactly replayable.
"""

from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import _kernels

__all__ = [
    "Tensor", "Tape", "ShapeError", "NumericsError", "TapeError",
    "backward", "grad_check", "no_grad", "set_debug_checks", "zero_grad",
    "matmul", "add", "sub", "neg", "mul", "div", "scale", "shift",
    "tanh", "relu", "sigmoid", "gelu", "exp", "log", "power", "clamp_min",
    "softmax", "tsum", "tmean", "embedding", "take_rows", "layer_norm",
    "dropout", "concat_last", "slice_axis", "transpose_last2", "reshape",
    "cosine_similarity",
]

_F32 = np.float32
_F64 = np.float64


class ShapeError(ValueError):
    """Raised when an op receives incompatibly shaped inputs."""


class NumericsError(FloatingPointError):
    """Raised when an op produces NaN/Inf while debug checks are enabled."""


class TapeError(RuntimeError):
    """Raised on invalid tape use (backward on a cleared tape, etc)."""


_DEBUG_CHECKS = False
_GRAD_ENABLED = True


def set_debug_checks(enabled: bool) -> None:
    """Toggle NaN/Inf screening of every op output (off by default)."""
    global _DEBUG_CHECKS
    _DEBUG_CHECKS = bool(enabled)


@contextlib.contextmanager
def no_grad():
    """Disable tape recording inside the block (inference / FD probes)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A float32 n-d array that can participate in the gradient tape."""

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.ascontiguousarray(data, dtype=_F32)
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # operator sugar; scalars are allowed on the right for * and +
    def __add__(self, other):
        if isinstance(other, (int, float)):
            return shift(self, float(other))
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __neg__(self):
        return neg(self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __truediv__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, 1.0 / float(other))
        return div(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


class Tape:
    """Ordered record of executed ops; execution order is topological."""

    __slots__ = ("_records",)

    def __init__(self):
        # each record: (output tensor, input tensors, grad_fn(gy) -> grads)
        self._records: list = []

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: Sequence[Tensor], grad_fn: Callable) -> None:
        self._records.append((out, inputs, grad_fn))

    def reset(self) -> None:
        self._records.clear()

    def run_backward(self, loss: Tensor) -> None:
        if loss.data.size != 1:
            raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
        if not self._records:
            raise TapeError("backward on an empty tape (already consumed by a previous backward?)")
        loss.grad = np.ones_like(loss.data)
        try:
            for out, inputs, grad_fn in reversed(self._records):
                gy = out.grad
                if gy is None:
                    continue  # op not on any path to the loss
                grads = grad_fn(gy)
                for t, g in zip(inputs, grads):
                    if g is None or not t.requires_grad:
                        continue
                    if t.grad is None:
                        t.grad = g
                    else:
                        # out-of-place: g may alias another tensor's grad buffer
                        t.grad = t.grad + g
        finally:
            self._records.clear()


_TAPE = Tape()


def active_tape() -> Tape:
    return _TAPE


def backward(loss: Tensor) -> None:
    """Backpropagate from a scalar loss; consumes (clears) the tape."""
    _TAPE.run_backward(loss)


def zero_grad(tensors: Iterable[Tensor]) -> None:
    for t in tensors:
        t.grad = None


def _finish(op: str, out_data: np.ndarray, inputs: Sequence[Tensor],
            grad_fn: Callable) -> Tensor:
    if _DEBUG_CHECKS and not np.all(np.isfinite(out_data)):
        raise NumericsError(f"{op} produced NaN/Inf")
    requires = _GRAD_ENABLED and any(t.requires_grad for t in inputs)
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = requires
    out.grad = None
    if requires:
        _TAPE.record(out, tuple(inputs), grad_fn)
    return out


def _sum_to_shape(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape (f64 accum)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)), dtype=_F64)
    keep = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if keep:
        g = g.sum(axis=keep, keepdims=True, dtype=_F64)
    return np.ascontiguousarray(g, dtype=_F32)


def _mm64(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """float32 matmul with float64 accumulation."""
    return np.matmul(a.astype(_F64), b.astype(_F64)).astype(_F32)


def _rows(a: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(a.reshape(-1, a.shape[-1]))


# ---------------------------------------------------------------------------
# kernels


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs >=2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner-dim mismatch: {a.shape} @ {b.shape}")
    try:
        np.broadcast_shapes(a.shape[:-2], b.shape[:-2])
    except ValueError:
        raise ShapeError(f"matmul batch dims not broadcastable: {a.shape} @ {b.shape}") from None
    ad, bd = a.data, b.data
    out = _mm64(ad, bd)

    def grad_fn(gy):
        ga = _sum_to_shape(_mm64(gy, bd.swapaxes(-1, -2)), ad.shape)
        gb = _sum_to_shape(_mm64(ad.swapaxes(-1, -2), gy), bd.shape)
        return ga, gb

    return _finish("matmul", out, (a, b), grad_fn)


def _broadcast_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes not broadcastable: {a.shape} vs {b.shape}") from None


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("add", a, b)
    out = a.data + b.data

    def grad_fn(gy):
        return _sum_to_shape(gy, a.shape), _sum_to_shape(gy, b.shape)

    return _finish("add", out, (a, b), grad_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("sub", a, b)
    out = a.data - b.data

    def grad_fn(gy):
        return _sum_to_shape(gy, a.shape), _sum_to_shape(-gy, b.shape)

    return _finish("sub", out, (a, b), grad_fn)


def neg(a: Tensor) -> Tensor:
    return _finish("neg", -a.data, (a,), lambda gy: (-gy,))


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("mul", a, b)
    ad, bd = a.data, b.data
    out = ad * bd

    def grad_fn(gy):
        return _sum_to_shape(gy * bd, a.shape), _sum_to_shape(gy * ad, b.shape)

    return _finish("mul", out, (a, b), grad_fn)


def div(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def grad_fn(gy):
        ga = _sum_to_shape(gy / bd, a.shape)
        gb = _sum_to_shape(-gy * ad / (bd * bd), b.shape)
        return ga, gb

    return _finish("div", out, (a, b), grad_fn)


def scale(a: Tensor, c: float) -> Tensor:
    c = _F32(c)
    return _finish("scale", a.data * c, (a,), lambda gy: (gy * c,))


def shift(a: Tensor, c: float) -> Tensor:
    return _finish("shift", a.data + _F32(c), (a,), lambda gy: (gy,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _finish("tanh", out, (a,), lambda gy: (gy * (1.0 - out * out),))


def relu(a: Tensor) -> Tensor:
    ad = a.data
    out = np.maximum(ad, _F32(0))
    # subgradient at 0 is 0
    return _finish("relu", out, (a,), lambda gy: (gy * (ad > 0),))


def sigmoid(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        out = (1.0 / (1.0 + np.exp(-a.data.astype(_F64)))).astype(_F32)
    return _finish("sigmoid", out, (a,), lambda gy: (gy * out * (1.0 - out),))


def gelu(a: Tensor) -> Tensor:
    """tanh-approximation GELU, composed from primitive ops."""
    inner = scale(add(a, scale(power(a, 3.0), 0.044715)), math.sqrt(2.0 / math.pi))
    return mul(scale(a, 0.5), shift(tanh(inner), 1.0))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _finish("exp", out, (a,), lambda gy: (gy * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    with np.errstate(divide="ignore", invalid="ignore"):
        out = np.log(ad)
    return _finish("log", out, (a,), lambda gy: (gy / ad,))


def power(a: Tensor, p: float) -> Tensor:
    ad = a.data
    out = ad ** _F32(p)

    def grad_fn(gy):
        if p == 0.0:
            return (np.zeros_like(ad),)
        return (gy * _F32(p) * ad ** _F32(p - 1.0),)

    return _finish("power", out, (a,), grad_fn)


def clamp_min(a: Tensor, c: float) -> Tensor:
    ad = a.data
    out = np.maximum(ad, _F32(c))
    return _finish("clamp_min", out, (a,), lambda gy: (gy * (ad > c),))


def softmax(a: Tensor) -> Tensor:
    """Softmax along the last axis."""
    ad = a.data
    y2 = _kernels.softmax_fwd(_rows(ad))
    out = y2.reshape(ad.shape)

    def grad_fn(gy):
        gx = _kernels.softmax_bwd(y2, _rows(gy))
        return (gx.reshape(ad.shape),)

    return _finish("softmax", out, (a,), grad_fn)


def tsum(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    ad = a.data
    out = np.asarray(np.sum(ad, axis=axis, keepdims=keepdims, dtype=_F64), dtype=_F32)

    def grad_fn(gy):
        if axis is None:
            return (np.full(ad.shape, gy.reshape(()), dtype=_F32),)
        g = gy if keepdims else np.expand_dims(gy, axis)
        return (np.ascontiguousarray(np.broadcast_to(g, ad.shape)),)

    return _finish("sum", out, (a,), grad_fn)


def tmean(a: Tensor, axis: Optional[int] = None, keepdims: bool = False) -> Tensor:
    ad = a.data
    n = ad.size if axis is None else ad.shape[axis]
    out = np.asarray(np.sum(ad, axis=axis, keepdims=keepdims, dtype=_F64) / n, dtype=_F32)

    def grad_fn(gy):
        inv = _F32(1.0 / n)
        if axis is None:
            return (np.full(ad.shape, gy.reshape(()) * inv, dtype=_F32),)
        g = gy if keepdims else np.expand_dims(gy, axis)
        return (np.ascontiguousarray(np.broadcast_to(g, ad.shape)) * inv,)

    return _finish("mean", out, (a,), grad_fn)


def embedding(table: Tensor, ids: np.ndarray) -> Tensor:
    """Gather rows of a [V, d] table by an integer id array of any shape."""
    if table.data.ndim != 2:
        raise ShapeError(f"embedding table must be 2-d, got {table.shape}")
    ids = np.asarray(ids)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"embedding id out of range for table of {table.shape[0]} rows")
    flat = np.ascontiguousarray(ids.reshape(-1).astype(np.int64))
    out = table.data[flat].reshape(ids.shape + (table.shape[1],))

    def grad_fn(gy):
        gt = np.zeros_like(table.data)
        _kernels.scatter_add_rows(gt, flat, _rows(gy))
        return (gt,)

    return _finish("embedding", out, (table,), grad_fn)


def take_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """Gather rows of a 2-d tensor (same backward as embedding)."""
    if a.data.ndim != 2:
        raise ShapeError(f"take_rows needs a 2-d tensor, got {a.shape}")
    idx = np.ascontiguousarray(np.asarray(idx).reshape(-1).astype(np.int64))
    out = a.data[idx]

    def grad_fn(gy):
        g = np.zeros_like(a.data)
        _kernels.scatter_add_rows(g, idx, np.ascontiguousarray(gy))
        return (g,)

    return _finish("take_rows", out, (a,), grad_fn)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    ad = a.data
    n = ad.shape[-1]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(
            f"layer_norm scale/shift must have shape ({n},), got {gamma.shape} and {beta.shape}")
    x2 = _rows(ad)
    y2, mean, rstd = _kernels.layernorm_fwd(x2, gamma.data, beta.data, eps)
    out = y2.reshape(ad.shape)

    def grad_fn(gy):
        gx, dgamma, dbeta = _kernels.layernorm_bwd(x2, gamma.data, mean, rstd, _rows(gy))
        return gx.reshape(ad.shape), dgamma, dbeta

    return _finish("layer_norm", out, (a, gamma, beta), grad_fn)


def dropout(a: Tensor, p: float, seed: int, train: bool = True) -> Tensor:
    """Seeded inverted dropout; identity when p == 0 or train is False."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout probability must be in [0, 1), got {p}")
    if not train or p == 0.0:
        return a
    rng = np.random.default_rng(seed)
    mask = (rng.random(a.shape) >= p).astype(_F32) * _F32(1.0 / (1.0 - p))
    return _finish("dropout", a.data * mask, (a,), lambda gy: (gy * mask,))


def concat_last(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenate along the last axis."""
    if not tensors:
        raise ShapeError("concat of zero tensors")
    lead = tensors[0].shape[:-1]
    for t in tensors[1:]:
        if t.shape[:-1] != lead:
            raise ShapeError(
                f"concat leading dims differ: {tensors[0].shape} vs {t.shape}")
    out = np.concatenate([t.data for t in tensors], axis=-1)
    widths = [t.shape[-1] for t in tensors]
    offsets = np.cumsum([0] + widths)

    def grad_fn(gy):
        return tuple(
            np.ascontiguousarray(gy[..., offsets[i]:offsets[i + 1]])
            for i in range(len(tensors)))

    return _finish("concat", out, tuple(tensors), grad_fn)


def slice_axis(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    ad = a.data
    axis = axis % ad.ndim
    if not (0 <= start <= stop <= ad.shape[axis]):
        raise ShapeError(
            f"slice [{start}:{stop}] out of range for axis {axis} of shape {a.shape}")
    sl = tuple(slice(None) if i != axis else slice(start, stop) for i in range(ad.ndim))
    out = np.ascontiguousarray(ad[sl])

    def grad_fn(gy):
        g = np.zeros_like(ad)
        g[sl] = gy
        return (g,)

    return _finish("slice", out, (a,), grad_fn)


def transpose_last2(a: Tensor) -> Tensor:
    if a.data.ndim < 2:
        raise ShapeError(f"transpose needs >=2-d, got {a.shape}")
    out = np.ascontiguousarray(a.data.swapaxes(-1, -2))

    def grad_fn(gy):
        return (np.ascontiguousarray(gy.swapaxes(-1, -2)),)

    return _finish("transpose", out, (a,), grad_fn)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    out = a.data.reshape(shape)

    def grad_fn(gy):
        return (gy.reshape(a.data.shape),)

    return _finish("reshape", out, (a,), grad_fn)


def cosine_similarity(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity along the last axis; fails on zero-norm slices."""
    if a.shape != b.shape:
        raise ShapeError(f"cosine_similarity shapes differ: {a.shape} vs {b.shape}")
    na2 = tsum(mul(a, a), axis=-1)
    nb2 = tsum(mul(b, b), axis=-1)
    if not (na2.data > 0).all() or not (nb2.data > 0).all():
        raise ValueError("cosine similarity undefined for zero-norm input")
    denom = mul(power(na2, 0.5), power(nb2, 0.5))
    return div(tsum(mul(a, b), axis=-1), denom)


# ---------------------------------------------------------------------------
# gradient checking


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-3) -> float:
    """Max relative error between autodiff and central finite differences.

    `f` must be scalar-valued and deterministic (seeded dropout is fine: the
    mask depends only on the seed, so it stays frozen across probes). The
    error metric is max over coordinates of |ad - fd| / max(1, |fd|).
    """
    if not x.requires_grad:
        raise ValueError("grad_check target must have requires_grad=True")
    out = f(x)
    if out.data.size != 1:
        raise ValueError(f"grad_check needs a scalar function, got shape {out.shape}")
    with no_grad():
        probe = f(x)
    if out.data.tobytes() != probe.data.tobytes():
        raise RuntimeError("grad_check: function is not deterministic under a fixed seed")
    x.grad = None
    backward(out)
    g_ad = np.zeros_like(x.data) if x.grad is None else x.grad.astype(_F64)

    flat = x.data.reshape(-1)
    g_flat = np.asarray(g_ad, dtype=_F64).reshape(-1)
    worst = 0.0
    with no_grad():
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = _F32(orig + h)
            hi = float(flat[i])
            fp = float(f(x).data.reshape(()))
            flat[i] = _F32(orig - h)
            lo = float(flat[i])
            fm = float(f(x).data.reshape(()))
            flat[i] = orig
            fd = (fp - fm) / (hi - lo)
            err = abs(float(g_flat[i]) - fd) / max(1.0, abs(fd))
            if err > worst:
                worst = err
    return worst
