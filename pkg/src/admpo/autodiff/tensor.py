"""Dense tensors with reverse-mode differentiation.

Each op returns a new :class:`Tensor` that remembers its parents and a closure
that pushes the output gradient back to them.  ``backward`` walks the recorded
graph once in reverse topological order.

Broadcasting is intentionally narrow: two operands must either share a shape,
or the second must be rank-1 with length equal to the last axis of the first
(a bias added to every row).  Python scalars are accepted everywhere.
"""
from __future__ import annotations

import contextlib
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from ..exceptions import ConfigurationError

_LOG_2PI = math.log(2.0 * math.pi)

_state = {"dtype": np.float32, "grad_enabled": True, "check_finite": True}


class ShapeError(ConfigurationError):
    """Operand shapes do not conform for the requested op."""


class NonFiniteError(FloatingPointError):
    """An op produced NaN or Inf from its inputs."""


def get_dtype():
    return _state["dtype"]


def set_dtype(dtype) -> None:
    dtype = np.dtype(dtype).type
    if dtype not in (np.float32, np.float64):
        raise ValueError(f"unsupported dtype {dtype!r}; use float32 or float64")
    _state["dtype"] = dtype


@contextlib.contextmanager
def precision(dtype):
    """Temporarily switch the default dtype (float64 for gradient checks)."""
    old = _state["dtype"]
    set_dtype(dtype)
    try:
        yield
    finally:
        _state["dtype"] = old


@contextlib.contextmanager
def no_grad():
    old = _state["grad_enabled"]
    _state["grad_enabled"] = False
    try:
        yield
    finally:
        _state["grad_enabled"] = old


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        arr = np.asarray(data, dtype=dtype or _state["dtype"])
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple:
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
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return take(self, idx)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(data: np.ndarray, parents: Sequence[Tensor], backward, op: str) -> Tensor:
    if _state["check_finite"] and not np.isfinite(data).all():
        raise NonFiniteError(f"op {op!r} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.op = op
    needs = _state["grad_enabled"] and any(p.requires_grad for p in parents)
    out.requires_grad = needs
    if needs:
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.array(g, dtype=t.data.dtype, copy=True)
    else:
        t.grad += g


def _check_pair(a: Tensor, b: Tensor, op: str) -> bool:
    """Return True when ``b`` is a row-broadcast bias for ``a``."""
    if a.shape == b.shape:
        return False
    if b.ndim == 1 and a.ndim >= 1 and a.shape[-1] == b.shape[0]:
        return True
    raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} do not conform")


def _unbroadcast(g: np.ndarray, bias: bool) -> np.ndarray:
    if bias:
        return g.reshape(-1, g.shape[-1]).sum(axis=0)
    return g


# ---------------------------------------------------------------- arithmetic

def add(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)

        def backward(g):
            _accum(a, g)

        return _result(a.data + c, (a,), backward, "add")
    bias = _check_pair(a, b, "add")

    def backward(g):
        _accum(a, g)
        _accum(b, _unbroadcast(g, bias))

    return _result(a.data + b.data, (a, b), backward, "add")


def neg(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, -g)

    return _result(-a.data, (a,), backward, "neg")


def sub(a, b) -> Tensor:
    if not isinstance(b, Tensor):
        return add(a, -float(b))
    return add(a, neg(b))


def mul(a, b) -> Tensor:
    a = as_tensor(a)
    if not isinstance(b, Tensor):
        c = float(b)

        def backward(g):
            _accum(a, g * c)

        return _result(a.data * c, (a,), backward, "mul")
    bias = _check_pair(a, b, "mul")

    def backward(g):
        _accum(a, g * b.data)
        _accum(b, _unbroadcast(g * a.data, bias))

    return _result(a.data * b.data, (a, b), backward, "mul")


def mul_const(a: Tensor, c: np.ndarray) -> Tensor:
    """Multiply by a non-differentiable array (e.g. a row mask or sampled noise)."""
    c = np.asarray(c, dtype=a.data.dtype)
    try:
        data = a.data * c
    except ValueError as exc:
        raise ShapeError(f"mul_const: shapes {a.shape} and {c.shape} do not conform") from exc
    if data.shape != a.shape:
        raise ShapeError(f"mul_const: constant {c.shape} would broadcast {a.shape} to {data.shape}")

    def backward(g):
        _accum(a, g * c)

    return _result(data, (a,), backward, "mul_const")


def square(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, 2.0 * a.data * g)

    return _result(a.data * a.data, (a,), backward, "square")


def minimum(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"minimum: shapes {a.shape} and {b.shape} do not conform")
    pick_a = a.data <= b.data

    def backward(g):
        _accum(a, np.where(pick_a, g, 0.0))
        _accum(b, np.where(pick_a, 0.0, g))

    return _result(np.where(pick_a, a.data, b.data), (a, b), backward, "minimum")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} do not conform")

    def backward(g):
        if a.requires_grad:
            _accum(a, g @ b.data.T)
        if b.requires_grad:
            _accum(b, a.data.T @ g)

    return _result(a.data @ b.data, (a, b), backward, "matmul")


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w + b`` as a single graph node."""
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0]:
        raise ShapeError(f"linear: shapes {x.shape} and {w.shape} do not conform")
    out = x.data @ w.data
    if b is not None:
        if b.shape != (w.shape[1],):
            raise ShapeError(f"linear: bias {b.shape} does not match weight {w.shape}")
        out = out + b.data
    parents = (x, w) if b is None else (x, w, b)

    def backward(g):
        if x.requires_grad:
            _accum(x, g @ w.data.T)
        if w.requires_grad:
            _accum(w, x.data.T @ g)
        if b is not None:
            _accum(b, g.sum(axis=0))

    return _result(out, parents, backward, "linear")


# ---------------------------------------------------------------- elementwise

def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softplus(x: np.ndarray) -> np.ndarray:
    return np.logaddexp(0.0, x)


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)

    def backward(g):
        _accum(a, g * (1.0 - y * y))

    return _result(y, (a,), backward, "tanh")


def sigmoid(a: Tensor) -> Tensor:
    y = _sigmoid(a.data)

    def backward(g):
        _accum(a, g * y * (1.0 - y))

    return _result(y, (a,), backward, "sigmoid")


def relu(a: Tensor) -> Tensor:
    pos = a.data > 0

    def backward(g):
        _accum(a, g * pos)

    return _result(np.maximum(a.data, 0), (a,), backward, "relu")


def softplus(a: Tensor) -> Tensor:
    def backward(g):
        _accum(a, g * _sigmoid(a.data))

    return _result(_softplus(a.data), (a,), backward, "softplus")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="ignore"):
        y = np.exp(a.data)

    def backward(g):
        _accum(a, g * y)

    return _result(y, (a,), backward, "exp")


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise NonFiniteError("op 'log' received non-positive input")

    def backward(g):
        _accum(a, g / a.data)

    return _result(np.log(a.data), (a,), backward, "log")


def soft_clamp(x: Tensor, lower, upper) -> Tensor:
    """Smoothly bound ``x`` to (lower, upper) with two softplus hinges.

    ``lower`` and ``upper`` may be floats or rank-1 tensors over the last axis
    (in which case they receive gradients).
    """
    lo = lower if isinstance(lower, Tensor) else None
    hi = upper if isinstance(upper, Tensor) else None
    lo_v = lo.data if lo is not None else float(lower)
    hi_v = hi.data if hi is not None else float(upper)
    if np.any(np.asarray(lo_v) >= np.asarray(hi_v)):
        raise ValueError("soft_clamp requires lower < upper")
    for bound in (lo, hi):
        if bound is not None:
            _check_pair(x, bound, "soft_clamp")
    d_hi = hi_v - x.data
    y1 = hi_v - _softplus(d_hi)
    d_lo = y1 - lo_v
    y = lo_v + _softplus(d_lo)
    parents = tuple(t for t in (x, lo, hi) if t is not None)

    def backward(g):
        s_lo = _sigmoid(d_lo)
        s_hi = _sigmoid(d_hi)
        g1 = g * s_lo
        _accum(x, g1 * s_hi)
        if lo is not None:
            _accum(lo, _unbroadcast(g * (1.0 - s_lo), True))
        if hi is not None:
            _accum(hi, _unbroadcast(g1 * (1.0 - s_hi), True))

    return _result(y.astype(x.data.dtype, copy=False), parents, backward, "soft_clamp")


# ---------------------------------------------------------------- structure

def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    ax = axis % tensors[0].ndim
    for t in tensors[1:]:
        other = [d for i, d in enumerate(t.shape) if i != ax]
        first = [d for i, d in enumerate(tensors[0].shape) if i != ax]
        if t.ndim != tensors[0].ndim or other != first:
            raise ShapeError(f"concat: shapes {tensors[0].shape} and {t.shape} do not conform on axis {axis}")
    splits = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=ax)):
            _accum(t, piece)

    return _result(np.concatenate([t.data for t in tensors], axis=ax), tensors, backward, "concat")


def take(a: Tensor, idx) -> Tensor:
    """Basic (slice / integer) indexing."""
    out = a.data[idx]

    def backward(g):
        full = np.zeros_like(a.data)
        full[idx] += g
        _accum(a, full)

    return _result(np.array(out, copy=True), (a,), backward, "slice")


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.shape))

    return _result(np.asarray(out), (a,), backward, "sum")


def reduce_mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = a.size if axis is None else a.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g / n, a.shape))

    return _result(np.asarray(out, dtype=a.data.dtype), (a,), backward, "mean")


# ---------------------------------------------------------------- fused

def gaussian_nll(target, mean: Tensor, log_std: Tensor) -> Tensor:
    """Elementwise negative log density of ``target`` under N(mean, exp(log_std)^2)."""
    target = as_tensor(target)
    if not (target.shape == mean.shape == log_std.shape):
        raise ShapeError(
            f"gaussian_nll: shapes {target.shape}, {mean.shape}, {log_std.shape} do not conform"
        )
    inv_std = np.exp(-log_std.data)
    z = (target.data - mean.data) * inv_std
    out = 0.5 * z * z + log_std.data + 0.5 * _LOG_2PI

    def backward(g):
        zg = g * z * inv_std
        _accum(target, zg)
        _accum(mean, -zg)
        _accum(log_std, g * (1.0 - z * z))

    return _result(out.astype(mean.data.dtype, copy=False), (target, mean, log_std), backward, "gaussian_nll")


def gru_cell(x: Tensor, h: Tensor, w_ih: Tensor, w_hh: Tensor, b_ih: Tensor, b_hh: Tensor,
             mask: np.ndarray | None = None) -> Tensor:
    """One GRU step with gates ordered (reset, update, candidate).

    Rows where ``mask`` is 0 carry ``h`` through unchanged, which lets sequences
    of different lengths share one batch when they are right-aligned.
    """
    hid = h.shape[1]
    if x.ndim != 2 or h.ndim != 2 or x.shape[0] != h.shape[0]:
        raise ShapeError(f"gru_cell: input {x.shape} and hidden {h.shape} do not conform")
    if w_ih.shape != (x.shape[1], 3 * hid) or w_hh.shape != (hid, 3 * hid):
        raise ShapeError(f"gru_cell: weights {w_ih.shape}/{w_hh.shape} do not match input {x.shape}, hidden {h.shape}")
    gi = x.data @ w_ih.data + b_ih.data
    gh = h.data @ w_hh.data + b_hh.data
    r = _sigmoid(gi[:, :hid] + gh[:, :hid])
    z = _sigmoid(gi[:, hid:2 * hid] + gh[:, hid:2 * hid])
    gh_n = gh[:, 2 * hid:]
    n = np.tanh(gi[:, 2 * hid:] + r * gh_n)
    h_new = (1.0 - z) * n + z * h.data
    if mask is not None:
        mask = np.asarray(mask, dtype=h.data.dtype).reshape(-1, 1)
        h_new = mask * h_new + (1.0 - mask) * h.data

    def backward(g):
        if mask is not None:
            g_cell = g * mask
            g_skip = g * (1.0 - mask)
        else:
            g_cell = g
            g_skip = None
        dn = g_cell * (1.0 - z)
        dz = g_cell * (h.data - n)
        dn_pre = dn * (1.0 - n * n)
        dr = dn_pre * gh_n
        dr_pre = dr * r * (1.0 - r)
        dz_pre = dz * z * (1.0 - z)
        dgi = np.concatenate([dr_pre, dz_pre, dn_pre], axis=1)
        dgh = np.concatenate([dr_pre, dz_pre, dn_pre * r], axis=1)
        if x.requires_grad:
            _accum(x, dgi @ w_ih.data.T)
        if h.requires_grad:
            dh = dgh @ w_hh.data.T + g_cell * z
            if g_skip is not None:
                dh = dh + g_skip
            _accum(h, dh)
        _accum(w_ih, x.data.T @ dgi)
        _accum(w_hh, h.data.T @ dgh)
        _accum(b_ih, dgi.sum(axis=0))
        _accum(b_hh, dgh.sum(axis=0))

    return _result(h_new, (x, h, w_ih, w_hh, b_ih, b_hh), backward, "gru_cell")


# ---------------------------------------------------------------- backward

def _topo_order(root: Tensor) -> list:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> list | None:
    """Populate ``.grad`` on every leaf reachable from the scalar ``loss``.

    When ``params`` is given their gradients are reset first and returned as a
    list of arrays; parameters the loss does not depend on get zeros.
    """
    if loss.size != 1 or loss.ndim > 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    params = list(params) if params is not None else None
    if params is not None:
        for p in params:
            p.grad = None
    if loss.requires_grad:
        order = _topo_order(loss)
        for node in order:
            if node._parents:
                node.grad = None
        loss.grad = np.ones_like(loss.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
                # interior buffers are not needed again
                node.grad = None if node._parents else node.grad
    if params is None:
        return None
    return [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
