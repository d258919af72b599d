"""Dense float64 tensors with reverse-mode automatic differentiation.

Every trainable component of the package is written against :class:`Tensor`
and the primitives in this module. Values are numpy ``float64`` arrays; each
primitive records its inputs and a backward closure, and :func:`backward`
replays those records in exact reverse creation order.

Broadcasting is deliberately narrow: ``add``/``sub``/``mul`` accept a 1-D
operand whose length equals the trailing axis of the other operand (row-wise
bias or gain). Anything else must be reshaped explicitly.
"""

from __future__ import annotations

import itertools
import math
import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "NonFiniteError",
    "Tensor",
    "Tape",
    "tensor",
    "parameter",
    "constant",
    "no_grad",
    "is_grad_enabled",
    "add",
    "sub",
    "mul",
    "div",
    "neg",
    "scale",
    "matmul",
    "exp",
    "log",
    "sigmoid",
    "tanh",
    "relu",
    "softmax",
    "log_softmax",
    "masked_softmax",
    "layer_norm",
    "concat",
    "stack",
    "reshape",
    "transpose",
    "getitem",
    "take_rows",
    "pick",
    "total",
    "sum_axis",
    "mean",
    "outer_add",
    "unfold",
    "max_pool_time",
    "custom",
    "logsumexp",
    "backward",
    "finite_difference_check",
]


class ShapeError(ValueError):
    """Operand shapes do not conform for a primitive."""


class NonFiniteError(FloatingPointError):
    """A forward pass produced NaN or infinity."""


_ids = itertools.count()
_state = threading.local()


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    """Disable recording for the enclosed block (inference only)."""
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    """A float64 array that optionally participates in differentiation."""

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "_op", "_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim == 0:
            arr = arr.reshape(())
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._op = "leaf"
        self._id = next(_ids)
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item: tensor of shape {self.shape} is not a scalar")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, op={self._op}{tag}, requires_grad={self.requires_grad})"

    # Operator sugar; each maps onto a primitive below.
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad: bool = False, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=requires_grad, name=name)


def parameter(data, name: str | None = None) -> Tensor:
    return Tensor(data, requires_grad=True, name=name)


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def _as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _record(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op}: forward produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._id = next(_ids)
    out._op = op
    out.name = None
    needs = is_grad_enabled() and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def _row_broadcast(op: str, a: Tensor, b: Tensor) -> str:
    """Classify operand layout: 'same', 'row_b' (b is a trailing-axis vector), 'row_a'."""
    if a.shape == b.shape:
        return "same"
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return "row_b"
    if a.ndim == 1 and b.ndim >= 1 and b.shape[-1] == a.shape[0]:
        return "row_a"
    if a.ndim == 0 or b.ndim == 0:
        return "scalar_a" if a.ndim == 0 else "scalar_b"
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform")


def _reduce_to(g: np.ndarray, layout: str, which: str) -> np.ndarray:
    if layout == "same":
        return g
    if (layout == "row_b" and which == "b") or (layout == "row_a" and which == "a"):
        return g.reshape(-1, g.shape[-1]).sum(axis=0)
    if (layout == "scalar_a" and which == "a") or (layout == "scalar_b" and which == "b"):
        return np.asarray(g.sum())
    return g


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    layout = _row_broadcast("add", a, b)

    def bw(g):
        return _reduce_to(g, layout, "a"), _reduce_to(g, layout, "b")

    return _record("add", a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    layout = _row_broadcast("sub", a, b)

    def bw(g):
        return _reduce_to(g, layout, "a"), -_reduce_to(g, layout, "b")

    return _record("sub", a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    layout = _row_broadcast("mul", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        return _reduce_to(g * bd, layout, "a"), _reduce_to(g * ad, layout, "b")

    return _record("mul", ad * bd, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    layout = _row_broadcast("div", a, b)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return _reduce_to(g / bd, layout, "a"), _reduce_to(-g * out / bd, layout, "b")

    return _record("div", out, (a, b), bw)


def neg(a) -> Tensor:
    a = _as_tensor(a)
    return _record("neg", -a.data, (a,), lambda g: (-g,))


def scale(a, c: float) -> Tensor:
    """Multiply by a non-differentiable Python scalar."""
    a = _as_tensor(a)
    c = float(c)
    return _record("scale", a.data * c, (a,), lambda g: (g * c,))


def matmul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")
    ad, bd = a.data, b.data

    def bw(g):
        return g @ bd.T, ad.T @ g

    return _record("matmul", ad @ bd, (a, b), bw)


def exp(a) -> Tensor:
    a = _as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return _record("exp", out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = _as_tensor(a)
    ad = a.data
    with np.errstate(divide="ignore"):
        out = np.log(ad)
    return _record("log", out, (a,), lambda g: (g / ad,))


def sigmoid(a) -> Tensor:
    a = _as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _record("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a) -> Tensor:
    a = _as_tensor(a)
    out = np.tanh(a.data)
    return _record("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def relu(a) -> Tensor:
    a = _as_tensor(a)
    pos = a.data > 0
    return _record("relu", np.where(pos, a.data, 0.0), (a,), lambda g: (g * pos,))


def softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _record("softmax", out, (a,), bw)


def log_softmax(a, axis: int = -1) -> Tensor:
    a = _as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=axis, keepdims=True))

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return _record("log_softmax", out, (a,), bw)


def masked_softmax(a, mask: np.ndarray) -> Tensor:
    """Softmax over the last axis restricted to ``mask`` (True = allowed).

    Forbidden entries receive exactly zero weight. A row with no allowed
    entry is an error rather than a silent uniform distribution.
    """
    a = _as_tensor(a)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != a.shape:
        raise ShapeError(f"masked_softmax: scores {a.shape} vs mask {mask.shape}")
    if not np.all(mask.any(axis=-1)):
        bad = np.argwhere(~mask.any(axis=-1))
        raise ValueError(f"masked_softmax: query rows with no allowed key: {bad[:5].tolist()}")
    z = np.where(mask, a.data, -np.inf)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.where(mask, np.exp(z), 0.0)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _record("masked_softmax", out, (a,), bw)


def layer_norm(a, eps: float = 1e-5) -> Tensor:
    """Normalize over the last axis to zero mean and unit variance (no affine)."""
    a = _as_tensor(a)
    x = a.data
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    out = xc * inv

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gxm = (g * out).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - out * gxm),)

    return _record("layer_norm", out, (a,), bw)


def concat(xs: Sequence, axis: int = -1) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat: no inputs")
    nd = xs[0].ndim
    ax = axis % nd if nd else 0
    for x in xs[1:]:
        if x.ndim != nd or any(x.shape[i] != xs[0].shape[i] for i in range(nd) if i != ax):
            raise ShapeError(f"concat: shapes {xs[0].shape} and {x.shape} do not conform on axis {axis}")
    sizes = [x.shape[ax] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        sl = [slice(None)] * nd
        outs = []
        for i in range(len(xs)):
            sl[ax] = slice(bounds[i], bounds[i + 1])
            outs.append(g[tuple(sl)])
        return outs

    return _record("concat", np.concatenate([x.data for x in xs], axis=ax), xs, bw)


def stack(xs: Sequence, axis: int = 0) -> Tensor:
    xs = [_as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("stack: no inputs")
    for x in xs[1:]:
        if x.shape != xs[0].shape:
            raise ShapeError(f"stack: shapes {xs[0].shape} and {x.shape} differ")

    def bw(g):
        return [np.take(g, i, axis=axis) for i in range(len(xs))]

    return _record("stack", np.stack([x.data for x in xs], axis=axis), xs, bw)


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = _as_tensor(a)
    src = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {src} to {tuple(shape)}") from exc
    return _record("reshape", out, (a,), lambda g: (g.reshape(src),))


def transpose(a) -> Tensor:
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose: expected a matrix, got shape {a.shape}")
    return _record("transpose", a.data.T.copy(), (a,), lambda g: (g.T,))


def getitem(a, idx) -> Tensor:
    """Basic (slice/int) indexing; integer-array indexing goes through take_rows."""
    a = _as_tensor(a)
    out = a.data[idx]
    src = a.shape

    def bw(g):
        full = np.zeros(src)
        full[idx] = g
        return (full,)

    return _record("getitem", np.array(out, dtype=np.float64), (a,), bw)


def take_rows(a, ids) -> Tensor:
    """Gather rows of a matrix (embedding lookup); repeated ids accumulate."""
    a = _as_tensor(a)
    ids = np.asarray(ids, dtype=np.int64)
    if a.ndim != 2:
        raise ShapeError(f"take_rows: expected a matrix, got shape {a.shape}")
    if ids.size and (ids.min() < 0 or ids.max() >= a.shape[0]):
        raise IndexError(f"take_rows: id out of range for {a.shape[0]} rows")
    src = a.shape

    def bw(g):
        full = np.zeros(src)
        np.add.at(full, ids, g)
        return (full,)

    return _record("take_rows", a.data[ids], (a,), bw)


def pick(a, ids) -> Tensor:
    """out[i] = a[i, ids[i]] for a matrix ``a``."""
    a = _as_tensor(a)
    ids = np.asarray(ids, dtype=np.int64)
    if a.ndim != 2 or ids.shape != (a.shape[0],):
        raise ShapeError(f"pick: matrix {a.shape} with index vector {ids.shape}")
    rows = np.arange(a.shape[0])
    src = a.shape

    def bw(g):
        full = np.zeros(src)
        full[rows, ids] = g
        return (full,)

    return _record("pick", a.data[rows, ids], (a,), bw)


def total(a) -> Tensor:
    a = _as_tensor(a)
    src = a.shape
    return _record("total", np.asarray(a.data.sum()), (a,), lambda g: (np.full(src, float(g)),))


def sum_axis(a, axis: int) -> Tensor:
    a = _as_tensor(a)
    src = a.shape

    def bw(g):
        return (np.broadcast_to(np.expand_dims(g, axis), src).copy(),)

    return _record("sum_axis", a.data.sum(axis=axis), (a,), bw)


def mean(a) -> Tensor:
    a = _as_tensor(a)
    return scale(total(a), 1.0 / a.size)


def outer_add(a, b) -> Tensor:
    """(T, H) and (U, H) -> (T, U, H) with out[t, u] = a[t] + b[u]."""
    a, b = _as_tensor(a), _as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ShapeError(f"outer_add: shapes {a.shape} and {b.shape} do not conform")

    def bw(g):
        return g.sum(axis=1), g.sum(axis=0)

    return _record("outer_add", a.data[:, None, :] + b.data[None, :, :], (a, b), bw)


def unfold(a, left: int, right: int) -> Tensor:
    """Stack a (T, C) sequence with its neighbours: (T, (left+1+right)*C).

    Row t holds frames t-left .. t+right, zero beyond the sequence edges.
    This is the im2col step for time convolutions.
    """
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"unfold: expected (T, C), got {a.shape}")
    T, C = a.shape
    k = left + 1 + right
    padded = np.zeros((T + left + right, C))
    padded[left:left + T] = a.data
    out = np.concatenate([padded[j:j + T] for j in range(k)], axis=1)

    def bw(g):
        gp = np.zeros_like(padded)
        for j in range(k):
            gp[j:j + T] += g[:, j * C:(j + 1) * C]
        return (gp[left:left + T],)

    return _record("unfold", out, (a,), bw)


def max_pool_time(a, width: int = 2) -> Tensor:
    """Non-overlapping max pooling over axis 0; a short tail window is kept."""
    a = _as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"max_pool_time: expected (T, C), got {a.shape}")
    T, C = a.shape
    n = -(-T // width)
    out = np.empty((n, C))
    arg = np.empty((n, C), dtype=np.int64)
    for i in range(n):
        win = a.data[i * width:min(T, (i + 1) * width)]
        j = win.argmax(axis=0)
        arg[i] = i * width + j
        out[i] = win[j, np.arange(C)]
    cols = np.arange(C)

    def bw(g):
        full = np.zeros((T, C))
        for i in range(n):
            full[arg[i], cols] += g[i]
        return (full,)

    return _record("max_pool_time", out, (a,), bw)


def custom(op: str, data: np.ndarray, parents: Sequence[Tensor], backward_fn) -> Tensor:
    """Record a fused operation whose gradient is supplied by the caller.

    ``backward_fn(g)`` must return one gradient (or None) per parent.
    """
    return _record(op, np.asarray(data, dtype=np.float64), [_as_tensor(p) for p in parents], backward_fn)


def logsumexp(xs: Iterable[float]) -> float:
    """Stable log(sum(exp(xs))); -inf entries contribute nothing."""
    arr = np.asarray(list(xs) if not isinstance(xs, np.ndarray) else xs, dtype=np.float64).ravel()
    if arr.size == 0:
        raise ValueError("logsumexp: empty input")
    m = arr.max()
    if m == -np.inf:
        return -math.inf
    return float(m + math.log(np.exp(arr - m).sum()))


class Tape:
    """The recorded operations reachable from a root, in creation order."""

    def __init__(self, root: Tensor):
        seen: dict[int, Tensor] = {}
        stack_ = [root]
        while stack_:
            node = stack_.pop()
            if node._id in seen:
                continue
            seen[node._id] = node
            stack_.extend(node._parents)
        self.nodes = sorted(seen.values(), key=lambda n: n._id)

    def __len__(self) -> int:
        return len(self.nodes)

    def __iter__(self):
        return iter(self.nodes)


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every requires_grad leaf."""
    if loss.size != 1:
        raise ShapeError(f"backward: loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    grads: dict[int, np.ndarray] = {loss._id: np.ones(loss.shape)}
    for node in reversed(Tape(loss).nodes):
        g = grads.pop(node._id, None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for p, pg in zip(node._parents, parent_grads):
            if pg is None or not p.requires_grad:
                continue
            pg = np.asarray(pg, dtype=np.float64).reshape(p.shape)
            if p._id in grads:
                grads[p._id] = grads[p._id] + pg
            else:
                grads[p._id] = pg


def finite_difference_check(
    f: Callable[[], Tensor],
    params: Sequence[Tensor],
    epsilon: float = 1e-5,
    max_coords: int | None = None,
    rng: np.random.Generator | None = None,
) -> float:
    """Max relative error between autodiff and central differences.

    ``f`` is re-evaluated with each parameter coordinate nudged by
    +/- ``epsilon``. Relative error per coordinate is
    ``|a - n| / max(|a|, |n|, 1e-12)``. ``max_coords`` samples a subset of
    coordinates per parameter for large tensors.
    """
    if not 0.0 < epsilon <= 1e-3:
        raise ValueError(f"epsilon must lie in (0, 1e-3], got {epsilon}")
    for p in params:
        p.grad = None
    loss = f()
    base = loss.item()
    if f().item() != base:
        raise RuntimeError("finite_difference_check: f is not deterministic")
    backward(loss)
    worst = 0.0
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros(p.shape)
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            rng = rng or np.random.default_rng(0)
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        ag = analytic.reshape(-1)
        with no_grad():
            for i in coords:
                orig = flat[i]
                flat[i] = orig + epsilon
                fp = f().item()
                flat[i] = orig - epsilon
                fm = f().item()
                flat[i] = orig
                num = (fp - fm) / (2.0 * epsilon)
                err = abs(ag[i] - num) / max(abs(ag[i]), abs(num), 1e-12)
                worst = max(worst, err)
    for p in params:
        p.grad = None
    return worst
