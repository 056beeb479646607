"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Every op takes :class:`Tensor` inputs and returns a new :class:`Tensor`.
When at least one input is attached to a :class:`Tape`, the op appends a
backward closure to that tape; otherwise it is a plain forward computation
(this is how acting-time inference runs without bookkeeping).

Shapes are explicit. The only implicit expansion is ``add_bias`` (a vector
added along the last axis) and the batched ``matmul`` of a 3-D tensor with a
2-D weight.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64


class TapeError(RuntimeError):
    pass


class Tensor:
    __slots__ = ("data", "grad", "tape")

    def __init__(self, data, tape: "Tape | None" = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.tape = tape

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, taped={self.tape is not None})"

    # operator sugar for the handful of same-shape ops
    def __add__(self, other: "Tensor") -> "Tensor":
        return add(self, other)

    def __sub__(self, other: "Tensor") -> "Tensor":
        return sub(self, other)

    def __mul__(self, other: "Tensor") -> "Tensor":
        return mul(self, other)

    def __matmul__(self, other: "Tensor") -> "Tensor":
        return matmul(self, other)


class Tape:
    """Records operations in execution order; backward replays them reversed.

    Execution order is already a topological order of the graph, so the
    reverse pass visits every node exactly once.
    """

    def __init__(self):
        self._nodes: list[tuple[Tensor, Callable[[np.ndarray], None]]] = []
        self._params: list[tuple[Tensor, object, str]] = []
        self.consumed = False

    def __len__(self) -> int:
        return len(self._nodes)

    def leaf(self, array) -> Tensor:
        """A differentiable input that is not a parameter (its gradient is kept on the tensor)."""
        return Tensor(array, self)

    def param(self, store, name: str) -> Tensor:
        t = Tensor(store.params[name], self)
        self._params.append((t, store, name))
        return t

    def record(self, out: Tensor, backward: Callable[[np.ndarray], None]) -> None:
        if self.consumed:
            raise TapeError("tape already consumed by backward()")
        self._nodes.append((out, backward))

    def backward(self, loss: Tensor) -> None:
        if self.consumed:
            raise TapeError("tape consumed twice")
        if loss.tape is not self:
            raise TapeError("loss was not recorded on this tape")
        if loss.data.size != 1:
            raise TapeError(f"loss must be a scalar, got shape {loss.shape}")
        loss.grad = np.ones_like(loss.data)
        for out, fn in reversed(self._nodes):
            if out.grad is not None:
                fn(out.grad)
        for t, store, name in self._params:
            if t.grad is not None:
                store.accumulate_grad(name, t.grad)
        self.consumed = True


def constant(array) -> Tensor:
    return Tensor(array, None)


def _tape_of(*xs: Tensor) -> "Tape | None":
    for x in xs:
        if x.tape is not None:
            return x.tape
    return None


def _accum(t: Tensor, g: np.ndarray) -> None:
    if t.tape is None:
        return
    t.grad = g if t.grad is None else t.grad + g


def _make(data: np.ndarray, inputs: Sequence[Tensor], backward) -> Tensor:
    tape = _tape_of(*inputs)
    out = Tensor(data, tape)
    if tape is not None:
        tape.record(out, backward)
    return out


def _check_same(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise ValueError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ----------------------------------------------------------------- arithmetic

def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "add")

    def back(g):
        _accum(a, g)
        _accum(b, g)

    return _make(a.data + b.data, (a, b), back)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "sub")

    def back(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(a.data - b.data, (a, b), back)


def mul(a: Tensor, b: Tensor) -> Tensor:
    _check_same(a, b, "mul")

    def back(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(a.data * b.data, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    return _make(a.data * c, (a,), lambda g: _accum(a, g * c))


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    if b.data.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise ValueError(f"add_bias: bias {b.shape} does not match last axis of {x.shape}")

    def back(g):
        _accum(x, g)
        _accum(b, g.reshape(-1, b.shape[0]).sum(axis=0))

    return _make(x.data + b.data, (x, b), back)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """``a @ b`` for 2-D x 2-D, 3-D x 2-D (shared weight) or 3-D x 3-D (batched)."""
    if a.data.ndim < 2 or b.data.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ValueError(f"matmul: incompatible shapes {a.shape} @ {b.shape}")
    if b.data.ndim == 3 and (a.data.ndim != 3 or a.shape[0] != b.shape[0]):
        raise ValueError(f"matmul: batch mismatch {a.shape} @ {b.shape}")

    shared = a.data.ndim == 3 and b.data.ndim == 2
    k = a.shape[-1]

    def back(g):
        if a.tape is not None:
            if shared:
                _accum(a, (g.reshape(-1, g.shape[-1]) @ b.data.T).reshape(a.shape))
            else:
                _accum(a, g @ np.swapaxes(b.data, -1, -2))
        if b.tape is not None:
            if shared:
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = np.swapaxes(a.data, -1, -2) @ g
            _accum(b, gb)

    if shared:
        out = (a.data.reshape(-1, k) @ b.data).reshape(a.shape[:-1] + (b.shape[-1],))
    else:
        out = a.data @ b.data
    return _make(out, (a, b), back)


def square(a: Tensor) -> Tensor:
    return _make(a.data * a.data, (a,), lambda g: _accum(a, 2.0 * a.data * g))


def sum_all(a: Tensor) -> Tensor:
    return _make(np.array(a.data.sum()), (a,), lambda g: _accum(a, np.full_like(a.data, g)))


def mean_all(a: Tensor) -> Tensor:
    n = a.data.size
    return _make(np.array(a.data.sum() / n), (a,), lambda g: _accum(a, np.full_like(a.data, g / n)))


def sum_axis(a: Tensor, axis: int) -> Tensor:
    def back(g):
        _accum(a, np.broadcast_to(np.expand_dims(g, axis), a.shape).copy())

    return _make(a.data.sum(axis=axis), (a,), back)


def div_rows(x: Tensor, d: Tensor) -> Tensor:
    """``x / d[..., None]``: divide each last-axis row of ``x`` by a scalar from ``d``."""
    if x.shape[:-1] != d.shape:
        raise ValueError(f"div_rows: {x.shape} rows vs divisor {d.shape}")
    dd = d.data[..., None]
    out = x.data / dd

    def back(g):
        _accum(x, g / dd)
        _accum(d, -(g * out).sum(axis=-1) / d.data)

    return _make(out, (x, d), back)


def select_rows(cond: np.ndarray, a: Tensor, fallback: np.ndarray) -> Tensor:
    """Row-wise choice: rows where ``cond`` is true come from ``a``, the rest from a constant."""
    cond = np.asarray(cond, dtype=bool)
    if cond.shape != a.shape[:-1]:
        raise ValueError("select_rows: condition shape mismatch")
    c = cond[..., None]
    out = np.where(c, a.data, fallback)
    return _make(out, (a,), lambda g: _accum(a, np.where(c, g, 0.0)))


# ---------------------------------------------------------------- activations

def relu(a: Tensor) -> Tensor:
    m = a.data > 0
    return _make(a.data * m, (a,), lambda g: _accum(a, g * m))


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    m = a.data > 0
    k = np.where(m, 1.0, slope)
    return _make(a.data * k, (a,), lambda g: _accum(a, g * k))


def elu(a: Tensor) -> Tensor:
    m = a.data > 0
    ex = np.exp(np.minimum(a.data, 0.0))
    out = np.where(m, a.data, ex - 1.0)
    return _make(out, (a,), lambda g: _accum(a, g * np.where(m, 1.0, ex)))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: _accum(a, g * out * (1.0 - out)))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return _make(out, (a,), lambda g: _accum(a, g * (1.0 - out * out)))


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: _accum(a, g * out))


def log(a: Tensor) -> Tensor:
    return _make(np.log(a.data), (a,), lambda g: _accum(a, g / a.data))


def softmax(a: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; entries where ``mask`` is false get probability 0."""
    z = a.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any(axis=-1).all():
            raise ValueError("softmax: a row has every entry masked out")
        z = np.where(mask, z, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        _accum(a, s * (g - (g * s).sum(axis=-1, keepdims=True)))

    return _make(s, (a,), back)


def log_softmax(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    out = z - lse
    s = np.exp(out)

    def back(g):
        _accum(a, g - s * g.sum(axis=-1, keepdims=True))

    return _make(out, (a,), back)


def straight_through(soft: Tensor) -> Tensor:
    """Forward: one-hot of the argmax over the last axis. Backward: identity onto ``soft``."""
    idx = soft.data.argmax(axis=-1)
    hard = np.zeros_like(soft.data)
    np.put_along_axis(hard, idx[..., None], 1.0, axis=-1)
    return _make(hard, (soft,), lambda g: _accum(soft, g))


# -------------------------------------------------------------- shape moving

def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    old = a.shape
    return _make(a.data.reshape(shape), (a,), lambda g: _accum(a, g.reshape(old)))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum(sizes)[:-1]

    def back(g):
        for x, part in zip(xs, np.split(g, bounds, axis=axis)):
            _accum(x, part)

    return _make(np.concatenate([x.data for x in xs], axis=axis), tuple(xs), back)


def take(a: Tensor, axis: int, start: int, stop: int) -> Tensor:
    """Contiguous slice ``[start:stop]`` along ``axis``."""
    sl = [slice(None)] * a.data.ndim
    sl[axis] = slice(start, stop)
    sl = tuple(sl)

    def back(g):
        full = np.zeros_like(a.data)
        full[sl] = g
        _accum(a, full)

    return _make(a.data[sl], (a,), back)


def tile(a: Tensor, axis: int, reps: int) -> Tensor:
    """Repeat a size-1 axis ``reps`` times."""
    if a.shape[axis] != 1:
        raise ValueError("tile: axis must have size 1")
    out = np.repeat(a.data, reps, axis=axis)
    return _make(out, (a,), lambda g: _accum(a, g.sum(axis=axis, keepdims=True)))


def pair_add(rows: Tensor, cols: Tensor) -> Tensor:
    """``out[..., j, i] = rows[..., j] + cols[..., i]`` for two equal-shape tensors."""
    _check_same(rows, cols, "pair_add")
    out = rows.data[..., :, None] + cols.data[..., None, :]

    def back(g):
        _accum(rows, g.sum(axis=-1))
        _accum(cols, g.sum(axis=-2))

    return _make(out, (rows, cols), back)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    """``a[idx]`` for a 2-D ``a``; entries of ``idx`` equal to -1 give zero rows."""
    idx = np.asarray(idx, dtype=np.int64)
    live = idx >= 0
    out = np.zeros((idx.shape[0], a.shape[1]))
    out[live] = a.data[idx[live]]

    def back(g):
        full = np.zeros_like(a.data)
        np.add.at(full, idx[live], g[live])
        _accum(a, full)

    return _make(out, (a,), back)


def pick(q: Tensor, idx: np.ndarray) -> Tensor:
    """``q[b, idx[b]]`` for a 2-D ``q``."""
    idx = np.asarray(idx, dtype=np.int64)
    rows = np.arange(q.shape[0])

    def back(g):
        full = np.zeros_like(q.data)
        full[rows, idx] = g
        _accum(q, full)

    return _make(q.data[rows, idx], (q,), back)
