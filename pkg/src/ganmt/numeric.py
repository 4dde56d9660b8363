"""Differentiable numpy kernels with a small reverse-mode tape.

Every trainable array lives in a :class:`ParameterStore`.  A forward pass
runs on a :class:`Tape`, which records each primitive together with a
closure computing the vector-Jacobian product; :func:`backward` replays the
record in reverse.  The set of primitives is deliberately small: exactly
what the encoder-decoder in :mod:`ganmt.model` needs.

GRU equations used throughout (row-vector convention, ``*`` elementwise)::

    z  = sigmoid(x W_z + h U_z + b_z)
    r  = sigmoid(x W_r + h U_r + b_r)
    h~ = tanh(x W_h + (r * h) U_h + b_h)
    h' = (1 - z) * h + z * h~

``W_z|W_r|W_h`` are stored side by side as ``W`` (in x 3n), ``U_z|U_r`` as
``U_zr`` (n x 2n) and ``b_z|b_r|b_h`` as ``b`` (3n).
"""

from __future__ import annotations

import re
from typing import Callable, Iterable, Iterator

import numpy as np

Tensor = np.ndarray

_NAME_RE = re.compile(r"^[A-Za-z0-9_]+(\.[A-Za-z0-9_]+)*$")


class ShapeError(ValueError):
    """Raised when array shapes are incompatible with an operation."""


class ParameterStore:
    """Named dense arrays; iteration is always in lexicographic name order."""

    def __init__(self, entries=None):
        self._entries: dict[str, np.ndarray] = {}
        for name, value in (entries or {}).items():
            self[name] = value

    def __setitem__(self, name: str, value) -> None:
        if not _NAME_RE.match(name):
            raise ValueError(f"invalid parameter name {name!r}")
        self._entries[name] = np.asarray(value)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._entries[name]

    def __contains__(self, name: object) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(sorted(self._entries))

    def names(self) -> list[str]:
        return sorted(self._entries)

    def items(self):
        return [(name, self._entries[name]) for name in self.names()]

    def copy(self) -> "ParameterStore":
        return ParameterStore({k: v.copy() for k, v in self._entries.items()})

    def astype(self, dtype) -> "ParameterStore":
        return ParameterStore({k: v.astype(dtype) for k, v in self._entries.items()})

    @property
    def dtype(self):
        for value in self._entries.values():
            return value.dtype
        return np.dtype(np.float32)

    def size(self) -> int:
        return int(sum(v.size for v in self._entries.values()))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ParameterStore):
            return NotImplemented
        if self.names() != other.names():
            return False
        return all(
            a.dtype == b.dtype and a.shape == b.shape and np.array_equal(a, b)
            for (_, a), (_, b) in zip(self.items(), other.items())
        )


def uniform_init(shape, rng: np.random.Generator, scale: float = 0.08, dtype=np.float32):
    return rng.uniform(-scale, scale, size=shape).astype(dtype)


class Var:
    """A value on a tape.  ``needs`` is true when it depends on a parameter."""

    __slots__ = ("value", "grad", "needs", "tape")

    def __init__(self, tape: "Tape", value: np.ndarray, needs: bool):
        self.tape = tape
        self.value = value
        self.needs = needs
        self.grad = None

    @property
    def shape(self):
        return self.value.shape

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Var(shape={self.value.shape}, needs={self.needs})"


class Tape:
    """Computation record for one forward pass.

    With ``record=False`` the same code path evaluates values only, which is
    what decoding and finite differences use.
    """

    def __init__(self, params: ParameterStore | None = None, record: bool = True):
        self.params = params
        self.record = record
        self.nodes: list = []
        self.leaves: dict[str, Var] = {}

    @property
    def dtype(self):
        return self.params.dtype if self.params is not None else np.dtype(np.float32)

    def param(self, name: str) -> Var:
        var = self.leaves.get(name)
        if var is None:
            var = Var(self, self.params[name], True)
            self.leaves[name] = var
        return var

    def const(self, value) -> Var:
        return Var(self, np.asarray(value, dtype=self.dtype), False)

    def emit(self, value, parents, vjp) -> Var:
        needs = any(p.needs for p in parents)
        out = Var(self, value, needs)
        if needs and self.record:
            self.nodes.append((out, parents, vjp))
        return out


def _wrap(tape: Tape, x) -> Var:
    return x if isinstance(x, Var) else tape.const(x)


def _tape_of(*xs) -> Tape:
    for x in xs:
        if isinstance(x, Var):
            return x.tape
    raise TypeError("at least one operand must be a Var")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _wrap(tape, a), _wrap(tape, b)
    sa, sb = a.value.shape, b.value.shape
    return tape.emit(a.value + b.value, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _wrap(tape, a), _wrap(tape, b)
    sa, sb = a.value.shape, b.value.shape
    return tape.emit(a.value - b.value, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Var:
    tape = _tape_of(a, b)
    a, b = _wrap(tape, a), _wrap(tape, b)
    av, bv = a.value, b.value
    return tape.emit(
        av * bv,
        (a, b),
        lambda g: (_unbroadcast(g * bv, av.shape) if a.needs else None,
                   _unbroadcast(g * av, bv.shape) if b.needs else None),
    )


def tanh(x: Var) -> Var:
    y = np.tanh(x.value)
    return x.tape.emit(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Var) -> Var:
    y = 0.5 * (np.tanh(0.5 * x.value) + 1.0)
    return x.tape.emit(y, (x,), lambda g: (g * y * (1.0 - y),))


def log(x: Var, floor: float = 0.0) -> Var:
    """Natural log of ``max(x, floor)``; no gradient flows below the floor."""
    xv = x.value
    if floor > 0.0:
        clipped = np.maximum(xv, floor)
        live = xv >= floor
        return x.tape.emit(np.log(clipped), (x,), lambda g: (np.where(live, g / clipped, 0.0),))
    return x.tape.emit(np.log(xv), (x,), lambda g: (g / xv,))


# ---------------------------------------------------------------------------
# linear algebra and reductions


def matmul(a, b) -> Var:
    """``a @ b`` where ``b`` is a matrix and ``a`` may carry leading batch axes."""
    tape = _tape_of(a, b)
    a, b = _wrap(tape, a), _wrap(tape, b)
    av, bv = a.value, b.value
    if bv.ndim != 2 or av.shape[-1] != bv.shape[0]:
        raise ShapeError(f"matmul: {av.shape} @ {bv.shape}")

    def vjp(g):
        ga = g @ bv.T if a.needs else None
        gb = None
        if b.needs:
            gb = av.reshape(-1, av.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return tape.emit(av @ bv, (a, b), vjp)


def bmv(m: Var, v: Var) -> Var:
    """Batched matrix-vector product: (B, T, k) x (B, k) -> (B, T)."""
    tape = _tape_of(m, v)
    m, v = _wrap(tape, m), _wrap(tape, v)
    mv, vv = m.value, v.value
    if mv.ndim != 3 or vv.shape != (mv.shape[0], mv.shape[2]):
        raise ShapeError(f"bmv: {mv.shape} x {vv.shape}")
    out = np.einsum("btk,bk->bt", mv, vv)
    return tape.emit(
        out,
        (m, v),
        lambda g: (g[:, :, None] * vv[:, None, :] if m.needs else None,
                   np.einsum("bt,btk->bk", g, mv) if v.needs else None),
    )


def weighted_sum(w: Var, m: Var) -> Var:
    """Convex combination of rows: (B, T) x (B, T, d) -> (B, d)."""
    tape = _tape_of(w, m)
    w, m = _wrap(tape, w), _wrap(tape, m)
    wv, mv = w.value, m.value
    if mv.ndim != 3 or wv.shape != mv.shape[:2]:
        raise ShapeError(f"weighted_sum: {wv.shape} x {mv.shape}")
    out = np.einsum("bt,btd->bd", wv, mv)
    return tape.emit(
        out,
        (w, m),
        lambda g: (np.einsum("bd,btd->bt", g, mv) if w.needs else None,
                   wv[:, :, None] * g[:, None, :] if m.needs else None),
    )


def sum_(x: Var, axis=None) -> Var:
    shape = x.value.shape
    out = x.value.sum(axis=axis)

    def vjp(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        axes = (axis,) if isinstance(axis, int) else axis
        return (np.broadcast_to(np.expand_dims(g, axes), shape).copy(),)

    return x.tape.emit(np.asarray(out), (x,), vjp)


def concat(xs: list, axis: int = -1) -> Var:
    tape = _tape_of(*xs)
    xs = [_wrap(tape, x) for x in xs]
    sizes = [x.value.shape[axis] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        idx = [slice(None)] * g.ndim
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            idx[axis] = slice(lo, hi)
            out.append(g[tuple(idx)])
        return out

    return tape.emit(np.concatenate([x.value for x in xs], axis=axis), xs, vjp)


def stack(xs: list, axis: int = 1) -> Var:
    tape = _tape_of(*xs)
    xs = [_wrap(tape, x) for x in xs]
    n = len(xs)

    def vjp(g):
        return [np.take(g, i, axis=axis) for i in range(n)]

    return tape.emit(np.stack([x.value for x in xs], axis=axis), xs, vjp)


def slice_last(x: Var, start: int, stop: int) -> Var:
    shape = x.value.shape

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[..., start:stop] = g
        return (full,)

    return x.tape.emit(x.value[..., start:stop], (x,), vjp)


def take(table: Var, ids) -> Var:
    """Row lookup (embedding); gradient is scattered back with ``np.add.at``."""
    ids = np.asarray(ids, dtype=np.int64)
    tv = table.value
    if ids.size and (ids.min() < 0 or ids.max() >= tv.shape[0]):
        raise IndexError(f"row id out of range [0, {tv.shape[0]})")

    def vjp(g):
        full = np.zeros_like(tv)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, tv.shape[1]))
        return (full,)

    return table.tape.emit(tv[ids], (table,), vjp)


def gather(x: Var, ids) -> Var:
    """Pick one entry per row: (B, V), (B,) -> (B,)."""
    ids = np.asarray(ids, dtype=np.int64)
    rows = np.arange(x.value.shape[0])
    shape = x.value.shape

    def vjp(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[rows, ids] = g
        return (full,)

    return x.tape.emit(x.value[rows, ids], (x,), vjp)


# ---------------------------------------------------------------------------
# nonlinear layers


def _softmax_np(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax(x: Var, mask=None) -> Var:
    """Softmax over the last axis; ``mask`` zeros (exactly) the masked entries."""
    z = x.value
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        z = np.where(mask, z, -np.inf)
    y = _softmax_np(z)
    return x.tape.emit(y, (x,), lambda g: (y * (g - (g * y).sum(axis=-1, keepdims=True)),))


def log_softmax(x: Var) -> Var:
    z = x.value - x.value.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return x.tape.emit(y, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def maxout(x, pieces: int):
    """Max over consecutive groups of ``pieces`` along the last axis.

    Accepts a :class:`Var` (returns a Var) or a plain array (returns an array).
    """
    if not isinstance(x, Var):
        xv = np.asarray(x)
        if pieces < 1 or xv.shape[-1] % pieces:
            raise ShapeError(f"maxout: length {xv.shape[-1]} not divisible by {pieces}")
        return xv.reshape(xv.shape[:-1] + (-1, pieces)).max(axis=-1)
    xv = x.value
    n = xv.shape[-1]
    if pieces < 1 or n % pieces:
        raise ShapeError(f"maxout: length {n} not divisible by {pieces}")
    grouped = xv.reshape(xv.shape[:-1] + (n // pieces, pieces))
    arg = grouped.argmax(axis=-1)
    out = np.take_along_axis(grouped, arg[..., None], axis=-1)[..., 0]

    def vjp(g):
        full = np.zeros_like(grouped)
        np.put_along_axis(full, arg[..., None], g[..., None], axis=-1)
        return (full.reshape(xv.shape),)

    return x.tape.emit(out, (x,), vjp)


def softmax_rows(m) -> np.ndarray:
    """Row-wise softmax of a plain rank-2 array."""
    m = np.asarray(m)
    if m.ndim != 2:
        raise ShapeError(f"softmax_rows expects a rank-2 array, got shape {m.shape}")
    return _softmax_np(m)


def gru_cell(x, h, tape, prefix: str = "gru"):
    """One GRU step (equations in the module docstring) using ``{prefix}.W``, ``.U_zr``, ``.U_h``, ``.b``.

    ``tape`` may also be a :class:`ParameterStore`; then ``x`` and ``h`` are
    plain arrays and a plain array is returned.
    """
    if isinstance(tape, ParameterStore):
        tape = Tape(tape, record=False)
        return gru_cell(tape.const(x), tape.const(h), tape, prefix).value
    W = tape.param(prefix + ".W")
    U_zr = tape.param(prefix + ".U_zr")
    U_h = tape.param(prefix + ".U_h")
    b = tape.param(prefix + ".b")
    n = U_h.value.shape[0]
    if x.value.shape[-1] != W.value.shape[0] or h.value.shape[-1] != n:
        raise ShapeError(
            f"gru_cell {prefix}: x dim {x.value.shape[-1]} / h dim {h.value.shape[-1]} "
            f"vs weights {W.value.shape}, {U_h.value.shape}"
        )
    xw = matmul(x, W) + b
    hu = matmul(h, U_zr)
    z = sigmoid(slice_last(xw, 0, n) + slice_last(hu, 0, n))
    r = sigmoid(slice_last(xw, n, 2 * n) + slice_last(hu, n, 2 * n))
    cand = tanh(slice_last(xw, 2 * n, 3 * n) + matmul(r * h, U_h))
    return h + z * (cand - h)


def init_gru(params: ParameterStore, prefix: str, n_in: int, n: int, rng, scale=0.08, dtype=np.float32):
    params[prefix + ".W"] = uniform_init((n_in, 3 * n), rng, scale, dtype)
    params[prefix + ".U_zr"] = uniform_init((n, 2 * n), rng, scale, dtype)
    params[prefix + ".U_h"] = uniform_init((n, n), rng, scale, dtype)
    params[prefix + ".b"] = np.zeros(3 * n, dtype=dtype)


# ---------------------------------------------------------------------------
# gradients


def backward(tape: Tape, loss: Var) -> dict[str, np.ndarray]:
    """Replay ``tape`` in reverse from scalar ``loss``.

    Returns a gradient for every parameter in the tape's store; parameters
    the forward pass never touched get zeros.
    """
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.value.shape}")
    if not tape.record:
        raise ValueError("tape was created with record=False")
    loss.grad = np.ones_like(loss.value)
    for out, parents, vjp in reversed(tape.nodes):
        if out.grad is None:
            continue
        for parent, g in zip(parents, vjp(out.grad)):
            if g is None or not parent.needs:
                continue
            if parent.grad is None:
                parent.grad = g
            else:
                parent.grad = parent.grad + g
    grads = {}
    names = tape.params.names() if tape.params is not None else sorted(tape.leaves)
    for name in names:
        leaf = tape.leaves.get(name)
        if leaf is not None and leaf.grad is not None:
            grads[name] = np.asarray(leaf.grad, dtype=leaf.value.dtype).reshape(leaf.value.shape)
        else:
            grads[name] = np.zeros_like(tape.params[name])
    return grads


def finite_difference_check(
    loss_fn: Callable[[Tape], Var],
    params: ParameterStore,
    epsilon: float = 1e-4,
    names: Iterable[str] | None = None,
) -> float:
    """Largest relative disagreement between analytic and central-difference gradients.

    ``loss_fn`` builds the scalar loss on the tape it is given.  The error per
    component is ``|a - d| / max(|a|, |d|, 1e-8)``.  ``params`` is perturbed in
    place and restored.
    """
    if not 0.0 < epsilon <= 1e-2:
        raise ValueError("epsilon must lie in (0, 1e-2]")
    tape = Tape(params)
    analytic = backward(tape, loss_fn(tape))

    def value() -> float:
        return float(loss_fn(Tape(params, record=False)).value)

    worst = 0.0
    for name in names if names is not None else params.names():
        flat = params[name].reshape(-1)
        grad = analytic[name].reshape(-1)
        for k in range(flat.size):
            orig = flat[k]
            flat[k] = orig + epsilon
            up = value()
            flat[k] = orig - epsilon
            down = value()
            flat[k] = orig
            numeric = (up - down) / (2.0 * epsilon)
            denom = max(abs(grad[k]), abs(numeric), 1e-8)
            worst = max(worst, abs(grad[k] - numeric) / denom)
    return worst
