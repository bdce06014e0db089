"""Dense float64 tensors with reverse-mode differentiation on an explicit tape.

Sized for the shapes this model actually uses: vectors, matrices, per-edge row
blocks, and sparse segment aggregation. Every op validates shapes eagerly and
registers its gradient rule on the tape shared by its inputs; a single
backward pass consumes the tape in reverse recording order, which makes
gradient accumulation bitwise deterministic.
"""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Operand shapes do not match the op contract."""


class TapeError(RuntimeError):
    """Tape misuse: cross-tape ops, double backward, or a non-scalar loss."""


class NumericError(RuntimeError):
    """A NaN or Inf surfaced where finite values are required."""


class Tape:
    """Ordered record of differentiable ops; one backward pass per forward."""

    def __init__(self):
        self._entries: list = []
        self._consumed = False

    def record(self, backward_fn) -> None:
        self._entries.append(backward_fn)

    def backward(self, loss: "Tensor") -> None:
        if self._consumed:
            raise TapeError("tape already consumed by a previous backward pass")
        if loss.tape is not self:
            raise TapeError("loss tensor was not produced on this tape")
        if loss.data.shape != ():
            raise TapeError(f"backward requires a scalar loss, got shape {loss.data.shape}")
        self._consumed = True
        loss.grad = np.ones((), dtype=np.float64)
        for fn in reversed(self._entries):
            fn()


class Tensor:
    """A float64 array, optionally tracked on a tape for differentiation."""

    __slots__ = ("data", "grad", "requires_grad", "tape")

    def __init__(self, data, tape: Tape | None = None, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def constant(data) -> Tensor:
    return Tensor(data)


def zeros(shape) -> Tensor:
    return Tensor(np.zeros(shape, dtype=np.float64))


def assert_finite(t: Tensor, context: str = "tensor") -> None:
    if not np.all(np.isfinite(t.data)):
        raise NumericError(f"non-finite values in {context}")


# -- op plumbing --------------------------------------------------------------


def _common_tape(*tensors: Tensor) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is None:
            continue
        if tape is None:
            tape = t.tape
        elif tape is not t.tape:
            raise TapeError("operands belong to different tapes")
    return tape


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward_builder) -> Tensor:
    """Create a result tensor and register its gradient rule if needed."""
    tape = _common_tape(*inputs)
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(data, tape if requires else None, requires)
    if requires and tape is not None:
        tape.record(backward_builder(out))
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    t.grad = g if t.grad is None else t.grad + g


# -- elementwise and linear ops ------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add: {a.data.shape} vs {b.data.shape}")
    def build(out):
        def backward():
            if out.grad is None:
                return
            _accum(a, out.grad)
            _accum(b, out.grad)
        return backward
    return _make(a.data + b.data, (a, b), build)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub: {a.data.shape} vs {b.data.shape}")
    def build(out):
        def backward():
            if out.grad is None:
                return
            _accum(a, out.grad)
            _accum(b, -out.grad)
        return backward
    return _make(a.data - b.data, (a, b), build)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product of same-shape tensors."""
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul: {a.data.shape} vs {b.data.shape}")
    def build(out):
        def backward():
            if out.grad is None:
                return
            _accum(a, out.grad * b.data)
            _accum(b, out.grad * a.data)
        return backward
    return _make(a.data * b.data, (a, b), build)


def relu(a: Tensor) -> Tensor:
    """max(x, 0); the subgradient at exactly 0 is 0."""
    def build(out):
        mask = a.data > 0.0
        def backward():
            if out.grad is None:
                return
            _accum(a, out.grad * mask)
        return backward
    return _make(np.maximum(a.data, 0.0), (a,), build)


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    value = np.empty_like(x)
    pos = x >= 0
    value[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    value[~pos] = ex / (1.0 + ex)
    def build(out):
        def backward():
            if out.grad is None:
                return
            _accum(a, out.grad * out.data * (1.0 - out.data))
        return backward
    return _make(value, (a,), build)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix-matrix, matrix-vector, or vector-vector (dot) product."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul: {ad.shape} @ {bd.shape}")
        def build(out):
            def backward():
                if out.grad is None:
                    return
                _accum(a, out.grad @ bd.T)
                _accum(b, ad.T @ out.grad)
            return backward
        return _make(ad @ bd, (a, b), build)
    if ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul: {ad.shape} @ {bd.shape}")
        def build(out):
            def backward():
                if out.grad is None:
                    return
                _accum(a, np.outer(out.grad, bd))
                _accum(b, ad.T @ out.grad)
            return backward
        return _make(ad @ bd, (a, b), build)
    if ad.ndim == 1 and bd.ndim == 1:
        if ad.shape[0] != bd.shape[0]:
            raise ShapeError(f"matmul: {ad.shape} @ {bd.shape}")
        def build(out):
            def backward():
                if out.grad is None:
                    return
                _accum(a, out.grad * bd)
                _accum(b, out.grad * ad)
            return backward
        return _make(np.asarray(ad @ bd), (a, b), build)
    raise ShapeError(f"matmul: unsupported ranks {ad.ndim} and {bd.ndim}")


def linear(w: Tensor, x: Tensor, b: Tensor | None = None) -> Tensor:
    """W x (+ b) for a matrix W and vector x."""
    y = matmul(w, x)
    return y if b is None else add(y, b)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError("transpose expects a 2-D tensor")
    def build(out):
        def backward():
            if out.grad is None:
                return
            _accum(a, out.grad.T)
        return backward
    return _make(a.data.T, (a,), build)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    if int(np.prod(shape, dtype=np.int64)) != a.data.size:
        raise ShapeError(f"reshape: cannot view {a.data.shape} as {shape}")
    def build(out):
        def backward():
            if out.grad is None:
                return
            _accum(a, out.grad.reshape(a.data.shape))
        return backward
    return _make(a.data.reshape(shape), (a,), build)


def concat(parts: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-D tensors along their only axis."""
    if not parts:
        raise ShapeError("concat of zero tensors")
    for p in parts:
        if p.data.ndim != 1:
            raise ShapeError("concat expects 1-D tensors")
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)
    def build(out):
        def backward():
            if out.grad is None:
                return
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                _accum(p, out.grad[lo:hi])
        return backward
    return _make(np.concatenate([p.data for p in parts]), tuple(parts), build)


def vstack(parts: Sequence[Tensor]) -> Tensor:
    """Stack 2-D tensors with equal column counts along axis 0."""
    if not parts:
        raise ShapeError("vstack of zero tensors")
    cols = parts[0].data.shape[1] if parts[0].data.ndim == 2 else None
    for p in parts:
        if p.data.ndim != 2 or p.data.shape[1] != cols:
            raise ShapeError("vstack expects 2-D tensors with equal column counts")
    sizes = [p.data.shape[0] for p in parts]
    offsets = np.cumsum([0] + sizes)
    def build(out):
        def backward():
            if out.grad is None:
                return
            for p, lo, hi in zip(parts, offsets[:-1], offsets[1:]):
                _accum(p, out.grad[lo:hi])
        return backward
    return _make(np.concatenate([p.data for p in parts], axis=0), tuple(parts), build)


def slice_cols(a: Tensor, start: int, stop: int) -> Tensor:
    if a.data.ndim != 2 or not (0 <= start <= stop <= a.data.shape[1]):
        raise ShapeError(f"slice_cols: [{start}:{stop}] of shape {a.data.shape}")
    def build(out):
        def backward():
            if out.grad is None:
                return
            g = np.zeros_like(a.data)
            g[:, start:stop] = out.grad
            _accum(a, g)
        return backward
    return _make(a.data[:, start:stop].copy(), (a,), build)


# -- row-indexed ops -----------------------------------------------------------


def _check_ids(ids: np.ndarray, limit: int, what: str) -> np.ndarray:
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= limit):
        raise IndexError(f"{what} id out of range [0, {limit})")
    return ids


def gather_rows(m: Tensor, ids) -> Tensor:
    """Select rows of a 2-D tensor; gradient scatter-adds back."""
    if m.data.ndim != 2:
        raise ShapeError("gather_rows expects a 2-D tensor")
    ids = _check_ids(ids, m.data.shape[0], "row")
    def build(out):
        def backward():
            if out.grad is None:
                return
            g = np.zeros_like(m.data)
            np.add.at(g, ids, out.grad)
            _accum(m, g)
        return backward
    return _make(m.data[ids], (m,), build)


def scatter_rows(rows: Tensor, ids, num_rows: int) -> Tensor:
    """Place rows at unique indices of an otherwise-zero (num_rows, d) tensor."""
    if rows.data.ndim != 2:
        raise ShapeError("scatter_rows expects a 2-D row block")
    ids = _check_ids(ids, num_rows, "row")
    if ids.shape[0] != rows.data.shape[0]:
        raise ShapeError("scatter_rows: one index per row required")
    if np.unique(ids).size != ids.size:
        raise ValueError("scatter_rows: duplicate target rows")
    data = np.zeros((num_rows, rows.data.shape[1]), dtype=np.float64)
    data[ids] = rows.data
    def build(out):
        def backward():
            if out.grad is None:
                return
            _accum(rows, out.grad[ids])
        return backward
    return _make(data, (rows,), build)


def index_scalar(x: Tensor, i: int) -> Tensor:
    if x.data.ndim != 1:
        raise ShapeError("index_scalar expects a 1-D tensor")
    if not 0 <= i < x.data.shape[0]:
        raise IndexError(f"index {i} out of range")
    def build(out):
        def backward():
            if out.grad is None:
                return
            g = np.zeros_like(x.data)
            g[i] = out.grad
            _accum(x, g)
        return backward
    return _make(np.asarray(x.data[i]), (x,), build)


def add_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Add a vector to every row of a matrix."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.data.shape[1] != v.data.shape[0]:
        raise ShapeError(f"add_rowvec: {m.data.shape} + {v.data.shape}")
    def build(out):
        def backward():
            if out.grad is None:
                return
            _accum(m, out.grad)
            _accum(v, out.grad.sum(axis=0))
        return backward
    return _make(m.data + v.data[None, :], (m, v), build)


def mul_rowvec(m: Tensor, v: Tensor) -> Tensor:
    """Multiply every row of a matrix by a vector."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.data.shape[1] != v.data.shape[0]:
        raise ShapeError(f"mul_rowvec: {m.data.shape} * {v.data.shape}")
    def build(out):
        def backward():
            if out.grad is None:
                return
            _accum(m, out.grad * v.data[None, :])
            _accum(v, (out.grad * m.data).sum(axis=0))
        return backward
    return _make(m.data * v.data[None, :], (m, v), build)


def scale_rows(m: Tensor, s: Tensor) -> Tensor:
    """Scale each row of a matrix by a per-row scalar."""
    if m.data.ndim != 2 or s.data.ndim != 1 or m.data.shape[0] != s.data.shape[0]:
        raise ShapeError(f"scale_rows: {m.data.shape} by {s.data.shape}")
    def build(out):
        def backward():
            if out.grad is None:
                return
            _accum(m, out.grad * s.data[:, None])
            _accum(s, (out.grad * m.data).sum(axis=1))
        return backward
    return _make(m.data * s.data[:, None], (m, s), build)


# -- aggregation ----------------------------------------------------------------


def segment_reduce(messages: Tensor, segments, num_segments: int, mode: str = "sum") -> Tensor:
    """Group message rows by segment id and reduce; empty segments yield zeros.

    The mean of an empty segment is defined as zero.
    """
    if messages.data.ndim != 2:
        raise ShapeError("segment_reduce expects (E, d) messages")
    if mode not in ("sum", "mean"):
        raise ValueError(f"unknown segment_reduce mode {mode!r}")
    segments = _check_ids(segments, num_segments, "segment")
    if segments.shape[0] != messages.data.shape[0]:
        raise ShapeError("segment_reduce: one segment id per message row required")
    total = np.zeros((num_segments, messages.data.shape[1]), dtype=np.float64)
    np.add.at(total, segments, messages.data)
    if mode == "mean":
        counts = np.bincount(segments, minlength=num_segments)
        denom = np.maximum(counts, 1).astype(np.float64)
        data = total / denom[:, None]
    else:
        denom = None
        data = total
    def build(out):
        def backward():
            if out.grad is None:
                return
            g = out.grad if denom is None else out.grad / denom[:, None]
            _accum(messages, g[segments])
        return backward
    return _make(data, (messages,), build)


def logsumexp(x: Tensor) -> Tensor:
    """log sum exp of a nonempty vector, stabilized by the max shift."""
    if x.data.ndim != 1:
        raise ShapeError("logsumexp expects a 1-D tensor")
    if x.data.size == 0:
        raise ValueError("logsumexp of an empty vector")
    peak = x.data.max()
    shifted = np.exp(x.data - peak)
    norm = shifted.sum()
    value = np.asarray(peak + np.log(norm))
    def build(out):
        softmax = shifted / norm
        def backward():
            if out.grad is None:
                return
            _accum(x, out.grad * softmax)
        return backward
    return _make(value, (x,), build)


def add_n(parts: Iterable[Tensor]) -> Tensor:
    """Sum of same-shape tensors (used to fold per-query losses)."""
    parts = list(parts)
    if not parts:
        raise ShapeError("add_n of zero tensors")
    out = parts[0]
    for p in parts[1:]:
        out = add(out, p)
    return out
