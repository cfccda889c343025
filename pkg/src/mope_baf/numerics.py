"""Dense float64 tensors with tape-based reverse-mode automatic differentiation.

Everything is stored as row-major numpy float64. Operations record a backward
closure on the currently active ``GradTape``; replaying the tape in reverse
order accumulates exact gradients into every reachable tensor that has
``requires_grad`` set. One tape per training step; no graph reuse.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import erf

from .errors import ConfigError, InputError, NumericError, ShapeError

_TAPE_STACK: list["GradTape"] = []

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


class GradTape:
    """Ordered record of operations for one forward pass.

    Used as a context manager; while active, every op whose output requires a
    gradient appends (output, backward closure) to the tape. ``backward`` walks
    the record in reverse, which is a valid topological order of the graph.
    """

    def __init__(self) -> None:
        self._nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []

    def __enter__(self) -> "GradTape":
        _TAPE_STACK.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPE_STACK.pop()

    def record(self, out: "Tensor", backward: Callable[[np.ndarray], None]) -> None:
        self._nodes.append((out, backward))

    def backward(self, loss: "Tensor") -> None:
        if loss.data.shape != ():
            raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")
        loss.grad = np.ones((), dtype=np.float64)
        for out, bwd in reversed(self._nodes):
            if out.grad is not None:
                bwd(out.grad)

    def clear(self) -> None:
        self._nodes = []


def _active_tape() -> GradTape | None:
    return _TAPE_STACK[-1] if _TAPE_STACK else None


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Dense float64 array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad")

    def __init__(self, data, requires_grad: bool = False) -> None:
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        g = _unbroadcast(g, self.data.shape)
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # arithmetic sugar; the actual work lives in the module-level ops
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(as_tensor(other), -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def sum(self, axis=None, keepdims: bool = False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, axes):
        return transpose(self, axes)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make_out(data: np.ndarray, parents: Sequence[Tensor],
              backward: Callable[[np.ndarray], None]) -> Tensor:
    out = Tensor(data, requires_grad=any(p.requires_grad for p in parents))
    tape = _active_tape()
    if out.requires_grad and tape is not None:
        tape.record(out, backward)
    return out


def add(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g: np.ndarray) -> None:
        a._accumulate(g)
        b._accumulate(g)

    return _make_out(a.data + b.data, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)

    def backward(g: np.ndarray) -> None:
        a._accumulate(g * b.data)
        b._accumulate(g * a.data)

    return _make_out(a.data * b.data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} x {b.shape}")

    def backward(g: np.ndarray) -> None:
        a._accumulate(np.matmul(g, np.swapaxes(b.data, -1, -2)))
        b._accumulate(np.matmul(np.swapaxes(a.data, -1, -2), g))

    return _make_out(np.matmul(a.data, b.data), (a, b), backward)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inverse = tuple(np.argsort(axes))

    def backward(g: np.ndarray) -> None:
        a._accumulate(np.transpose(g, inverse))

    return _make_out(np.transpose(a.data, axes), (a,), backward)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    old = a.data.shape

    def backward(g: np.ndarray) -> None:
        a._accumulate(g.reshape(old))

    return _make_out(a.data.reshape(shape), (a,), backward)


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def backward(g: np.ndarray) -> None:
        a._accumulate(g)

    return _make_out(np.broadcast_to(a.data, shape).copy(), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g: np.ndarray) -> None:
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return _make_out(np.concatenate([t.data for t in tensors], axis=axis),
                     tensors, backward)


def getitem(a: Tensor, key) -> Tensor:
    """Slice/gather; integer-array keys (embedding lookup) accumulate duplicates."""

    def backward(g: np.ndarray) -> None:
        if not a.requires_grad:
            return
        if a.grad is None:
            a.grad = np.zeros_like(a.data)
        np.add.at(a.grad, key, g)

    return _make_out(a.data[key].copy(), (a,), backward)


def tensor_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    def backward(g: np.ndarray) -> None:
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        a._accumulate(np.broadcast_to(g, a.data.shape).copy())

    return _make_out(a.data.sum(axis=axis, keepdims=keepdims), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.size
    else:
        n = a.shape[axis]
    return mul(tensor_sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def gelu(a: Tensor) -> Tensor:
    """Exact erf-based GELU, elementwise."""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def backward(g: np.ndarray) -> None:
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        a._accumulate(g * (cdf + x * pdf))

    return _make_out(x * cdf, (a,), backward)


def masked_softmax(scores: Tensor, mask: np.ndarray) -> Tensor:
    """Row softmax over allowed keys only; masked entries are exactly zero.

    ``scores`` has shape [..., q, k]; ``mask`` is a bool [q, k] matrix shared
    across the leading axes. Stabilized by max-subtraction over allowed entries.
    """
    scores = as_tensor(scores)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != scores.shape[-2:]:
        raise ShapeError(
            f"mask shape {mask.shape} does not match score rows/cols {scores.shape[-2:]}")
    if not mask.any(axis=-1).all():
        raise ConfigError("masked_softmax: a query row has no allowed keys")

    maskb = np.broadcast_to(mask, scores.shape)
    neg = np.where(maskb, scores.data, -np.inf)
    m = neg.max(axis=-1, keepdims=True)
    e = np.zeros_like(scores.data)
    np.exp(scores.data - m, out=e, where=maskb)
    p = e / e.sum(axis=-1, keepdims=True)

    def backward(g: np.ndarray) -> None:
        inner = (g * p).sum(axis=-1, keepdims=True)
        scores._accumulate(p * (g - inner))

    return _make_out(p, (scores,), backward)


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize the last axis to mean 0 / variance 1, then scale and shift."""
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    d = x.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError(f"layer_norm: gamma/beta must be [{d}], got {gamma.shape}/{beta.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    xm = x.data - mu
    var = (xm * xm).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xm * inv

    def backward(g: np.ndarray) -> None:
        reduce_axes = tuple(range(g.ndim - 1))
        gamma._accumulate((g * xhat).sum(axis=reduce_axes))
        beta._accumulate(g.sum(axis=reduce_axes))
        dxhat = g * gamma.data
        dx = inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                    - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        x._accumulate(dx)

    return _make_out(gamma.data * xhat + beta.data, (x, gamma, beta), backward)


def cross_entropy(logits: Tensor, labels: Sequence[int]) -> Tensor:
    """Mean negative log-softmax of the true class over the batch."""
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"cross_entropy expects [batch, classes], got {logits.shape}")
    b, k = logits.shape
    labels = np.asarray(labels, dtype=np.int64)
    if labels.shape != (b,):
        raise InputError(f"cross_entropy: {b} rows but {labels.shape} labels")
    if labels.min() < 0 or labels.max() >= k:
        raise InputError(f"cross_entropy: label out of range [0, {k})")

    z = logits.data
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    p = e / e.sum(axis=1, keepdims=True)
    nll = -(z[np.arange(b), labels] - m[:, 0] - np.log(e.sum(axis=1)))
    loss = nll.mean()

    def backward(g: np.ndarray) -> None:
        dz = p.copy()
        dz[np.arange(b), labels] -= 1.0
        logits._accumulate(g * dz / b)

    return _make_out(np.float64(loss), (logits,), backward)


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str
    worst_index: int


def zero_grads(params: dict[str, Tensor]) -> None:
    for t in params.values():
        t.zero_grad()


def finite_diff_check(f: Callable[[], Tensor], params: dict[str, Tensor],
                      h: float = 1e-4) -> GradCheckResult:
    """Compare tape gradients of scalar-valued ``f`` against central differences.

    Relative error uses denominator max(|analytic|, |numeric|, 1e-8) per
    coordinate; the worst offender is reported by parameter name and flat index.
    """
    zero_grads(params)
    with GradTape() as tape:
        loss = f()
    if not np.isfinite(loss.data):
        raise NumericError(f"finite_diff_check: loss is not finite ({loss.data})")
    tape.backward(loss)
    analytic = {name: (np.zeros_like(t.data) if t.grad is None else t.grad.copy())
                for name, t in params.items()}

    worst = GradCheckResult(0.0, "", -1)
    for name, t in params.items():
        flat = t.data.reshape(-1)
        aflat = analytic[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            if not (math.isfinite(fp) and math.isfinite(fm)):
                raise NumericError(f"finite_diff_check: non-finite f at {name}[{i}]")
            numeric = (fp - fm) / (2.0 * h)
            rel = abs(aflat[i] - numeric) / max(abs(aflat[i]), abs(numeric), 1e-8)
            if rel > worst.max_rel_error:
                worst = GradCheckResult(rel, name, i)
    return worst
