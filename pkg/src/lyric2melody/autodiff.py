"""Minimal dense-tensor arithmetic with reverse-mode differentiation.

Just enough ops to express an LSTM encoder/decoder with additive attention:
matmul, broadcast add/mul, concat, column slicing, tanh, sigmoid, softmax,
embedding gather and masked cross entropy.  Values are 64-bit floats and
every op output is checked for finiteness, so gradient checks are decisive.

The computation record is dynamic: each op links its output tensor to its
inputs and stores a backward closure.  :func:`backward` topologically orders
the record (iteratively, so long unrolled sequences cannot hit the recursion
limit) and accumulates gradients by sum over fan-out.  Records are rebuilt
every step; recorded tensors are never mutated in place.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import LyricMelodyError


class ShapeMismatch(LyricMelodyError):
    """Operand shapes are incompatible for the requested op."""


class NonFiniteValue(LyricMelodyError):
    """An op produced NaN or Inf in its forward values."""


class NonFiniteGradient(LyricMelodyError):
    """Backward propagation produced NaN or Inf."""


class Tensor:
    """A rank <= 3 float64 array plus its place in the computation record."""

    __slots__ = ("data", "grad", "requires_grad", "_children", "_backward_fn")

    def __init__(self, data, requires_grad: bool = False,
                 _children: tuple = ()):
        self.data = np.asarray(data, dtype=np.float64)
        if self.data.ndim > 3:
            raise ShapeMismatch(f"rank {self.data.ndim} tensors are unsupported")
        if not np.all(np.isfinite(self.data)):
            raise NonFiniteValue(f"non-finite values in tensor of shape {self.data.shape}")
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(c.requires_grad for c in _children)
        self._children = _children
        self._backward_fn: Callable[[np.ndarray], None] | None = None

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    # Operator sugar delegating to the module-level ops.
    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _accumulate(child: Tensor, grad: np.ndarray):
    """Add one fan-out contribution to a child's gradient."""
    if not child.requires_grad:
        return
    if not np.all(np.isfinite(grad)):
        raise NonFiniteGradient(
            f"non-finite gradient for tensor of shape {child.data.shape}")
    if child.grad is None:
        child.grad = np.array(grad, dtype=np.float64)
    else:
        child.grad = child.grad + grad


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_data = a.data + b.data
    except ValueError as exc:
        raise ShapeMismatch(f"add: {a.shape} vs {b.shape}") from exc
    out = Tensor(out_data, _children=(a, b))

    def _backward(g):
        _accumulate(a, _unbroadcast(g, a.shape))
        _accumulate(b, _unbroadcast(g, b.shape))

    out._backward_fn = _backward
    return out


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    try:
        out_data = a.data * b.data
    except ValueError as exc:
        raise ShapeMismatch(f"mul: {a.shape} vs {b.shape}") from exc
    out = Tensor(out_data, _children=(a, b))

    def _backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.shape))

    out._backward_fn = _backward
    return out


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    out = Tensor(a.data @ b.data, _children=(a, b))

    def _backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    out._backward_fn = _backward
    return out


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeMismatch("concat of zero tensors")
    try:
        out_data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeMismatch(f"concat: {[t.shape for t in tensors]}") from exc
    out = Tensor(out_data, _children=tuple(tensors))
    sizes = [t.data.shape[axis] for t in tensors]
    boundaries = np.cumsum(sizes)[:-1]

    def _backward(g):
        for t, piece in zip(tensors, np.split(g, boundaries, axis=axis)):
            _accumulate(t, piece)

    out._backward_fn = _backward
    return out


def slice_cols(t: Tensor, start: int, stop: int) -> Tensor:
    """Columns [start, stop) along the last axis."""
    out = Tensor(t.data[..., start:stop], _children=(t,))

    def _backward(g):
        full = np.zeros_like(t.data)
        full[..., start:stop] = g
        _accumulate(t, full)

    out._backward_fn = _backward
    return out


def split4(t: Tensor) -> tuple[Tensor, Tensor, Tensor, Tensor]:
    """Split the last axis into four equal column blocks (LSTM gates)."""
    width = t.data.shape[-1]
    if width % 4 != 0:
        raise ShapeMismatch(f"split4 needs a multiple-of-4 last axis, got {width}")
    u = width // 4
    return tuple(slice_cols(t, i * u, (i + 1) * u) for i in range(4))


def reshape(t: Tensor, shape: tuple) -> Tensor:
    if int(np.prod(shape)) != t.data.size:
        raise ShapeMismatch(f"reshape: {t.shape} -> {shape}")
    out = Tensor(t.data.reshape(shape), _children=(t,))

    def _backward(g):
        _accumulate(t, g.reshape(t.data.shape))

    out._backward_fn = _backward
    return out


def tanh(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    out = Tensor(np.tanh(t.data), _children=(t,))

    def _backward(g):
        _accumulate(t, g * (1.0 - out.data ** 2))

    out._backward_fn = _backward
    return out


def sigmoid(t: Tensor) -> Tensor:
    t = _as_tensor(t)
    x = t.data
    # Piecewise form keeps exp() arguments nonpositive.
    pos = x >= 0
    z = np.empty_like(x)
    z[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    enx = np.exp(x[~pos])
    z[~pos] = enx / (1.0 + enx)
    out = Tensor(z, _children=(t,))

    def _backward(g):
        _accumulate(t, g * out.data * (1.0 - out.data))

    out._backward_fn = _backward
    return out


def softmax(t: Tensor, axis: int = -1) -> Tensor:
    t = _as_tensor(t)
    shifted = t.data - t.data.max(axis=axis, keepdims=True)
    exp = np.exp(shifted)
    out_data = exp / exp.sum(axis=axis, keepdims=True)
    out = Tensor(out_data, _children=(t,))

    def _backward(g):
        y = out.data
        dot = (g * y).sum(axis=axis, keepdims=True)
        _accumulate(t, y * (g - dot))

    out._backward_fn = _backward
    return out


def embedding_gather(table: Tensor, ids: Sequence[int]) -> Tensor:
    """Rows of an embedding table: [len(ids) x d]."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.ndim != 1 or table.data.ndim != 2:
        raise ShapeMismatch(f"embedding_gather: table {table.shape}, ids {ids.shape}")
    out = Tensor(table.data[ids], _children=(table,))

    def _backward(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids, g)
        _accumulate(table, full)

    out._backward_fn = _backward
    return out


def cross_entropy(logits: Tensor, target_ids: Sequence[int],
                  pad_mask: Sequence[float] | None = None) -> Tensor:
    """Mean negative log-likelihood over non-pad positions.

    ``logits`` is [T x V]; ``target_ids`` length T; ``pad_mask`` length T with
    1.0 at positions that count (defaults to all ones).
    """
    targets = np.asarray(target_ids, dtype=np.int64)
    if logits.data.ndim != 2 or targets.ndim != 1 \
            or targets.shape[0] != logits.data.shape[0]:
        raise ShapeMismatch(
            f"cross_entropy: logits {logits.shape}, targets {targets.shape}")
    if pad_mask is None:
        mask = np.ones(targets.shape[0], dtype=np.float64)
    else:
        mask = np.asarray(pad_mask, dtype=np.float64)
        if mask.shape != targets.shape:
            raise ShapeMismatch(f"cross_entropy: mask {mask.shape} vs targets {targets.shape}")
    n_counted = mask.sum()
    if n_counted <= 0:
        raise ShapeMismatch("cross_entropy: pad mask excludes every position")

    shifted = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(targets.shape[0])
    nll = -log_probs[rows, targets]
    out = Tensor((nll * mask).sum() / n_counted, _children=(logits,))

    def _backward(g):
        probs = np.exp(log_probs)
        dlogits = probs.copy()
        dlogits[rows, targets] -= 1.0
        dlogits *= (mask / n_counted)[:, None]
        _accumulate(logits, float(g) * dlogits)

    out._backward_fn = _backward
    return out


def backward(loss: Tensor):
    """Reverse-mode sweep from a scalar loss; gradients land in ``.grad``."""
    if loss.data.size != 1:
        raise ShapeMismatch(f"backward needs a scalar loss, got shape {loss.shape}")

    # Iterative topological sort (children before parents).
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for child in node._children:
            if id(child) not in visited:
                stack.append((child, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward_fn is not None and node.requires_grad and node.grad is not None:
            node._backward_fn(node.grad)


@dataclass
class GradCheckReport:
    """Outcome of comparing analytic gradients to central differences."""

    per_param: dict[str, float]
    max_rel_err: float
    tol: float
    passed: bool


def grad_check(f: Callable[[], Tensor], params: dict[str, Tensor],
               h: float = 1e-5, tol: float = 1e-5) -> GradCheckReport:
    """Check every element of every parameter against finite differences.

    ``f`` must be a deterministic closure recomputing the scalar loss from
    the parameters' current data.  Relative error per element is
    ``|ad - fd| / max(1, |ad|, |fd|)``.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    for p in params.values():
        p.zero_grad()
    loss = f()
    backward(loss)
    analytic = {name: (np.zeros_like(p.data) if p.grad is None else p.grad.copy())
                for name, p in params.items()}

    per_param: dict[str, float] = {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        worst = 0.0
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            loss_plus = f().item()
            flat[i] = saved - h
            loss_minus = f().item()
            flat[i] = saved
            fd = (loss_plus - loss_minus) / (2.0 * h)
            ad = analytic[name].reshape(-1)[i]
            rel = abs(ad - fd) / max(1.0, abs(ad), abs(fd))
            worst = max(worst, rel)
        per_param[name] = worst

    max_rel_err = max(per_param.values()) if per_param else 0.0
    return GradCheckReport(per_param=per_param, max_rel_err=max_rel_err,
                           tol=tol, passed=max_rel_err <= tol)
