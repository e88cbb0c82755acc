"""Dense float64 tensors with reverse-mode automatic differentiation.

Every value is a numpy float64 array wrapped in a :class:`Tensor`. Operations
record their parents and a backward closure on the result, so a graph of
recorded nodes (the tape) hangs off every value produced while some input
requires gradient. ``backward(loss)`` walks that graph once in reverse
topological order and accumulates gradients additively into ``.grad``.

The engine is deliberately small: stride-1 zero-padded convolution, 2-D
matmul, the usual pointwise nonlinearities, softmax over the last axis,
reductions, reshaping, and embedding lookup. That is enough to express the
conv/recurrent/attention networks and every loss in this package, single
threaded and bitwise deterministic.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Operand shapes do not conform to an operation."""


class Tensor:
    """A float64 array, optionally recorded on the differentiation tape.

    ``requires_grad`` marks leaves that want gradients; results of operations
    on such tensors are recorded automatically. ``grad`` is ``None`` until a
    backward pass reaches the tensor, then a same-shape array.
    """

    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def recorded(self):
        """True when this tensor sits on the tape (has a backward closure)."""
        return self._backward is not None

    def detach(self):
        """A view of the same data, cut off the tape; never receives grad."""
        return Tensor(self.data)

    def item(self):
        if self.data.size != 1:
            raise ShapeError(f"item() needs a scalar, got shape {self.shape}")
        return float(self.data.reshape(()))

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; the full op set lives at module level.
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

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)


def _lift(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn):
    """Build an op result, recording it only if some parent requires grad."""
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(t, g):
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.data)
    t.grad += g


def _unbroadcast(g, shape):
    """Reduce a broadcast gradient back to ``shape``."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcastable(sa, sb):
    la, lb = len(sa), len(sb)
    for i in range(1, min(la, lb) + 1):
        a, b = sa[-i], sb[-i]
        if a != b and a != 1 and b != 1:
            return False
    return True


def _check_broadcast(op, a, b):
    if not _broadcastable(a.shape, b.shape):
        raise ShapeError(
            f"{op}: operands of shape {a.shape} and {b.shape} do not broadcast"
        )


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast("add", a, b)
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), backward)


def sub(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast("sub", a, b)
    out_data = a.data - b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))

    return _make(out_data, (a, b), backward)


def mul(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast("mul", a, b)
    out_data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), backward)


def div(a, b):
    a, b = _lift(a), _lift(b)
    _check_broadcast("div", a, b)
    out_data = a.data / b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g / b.data, a.data.shape))
        _accumulate(b, _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

    return _make(out_data, (a, b), backward)


def neg(a):
    a = _lift(a)

    def backward(g):
        _accumulate(a, -g)

    return _make(-a.data, (a,), backward)


# ---------------------------------------------------------------------------
# pointwise nonlinearities


def relu(a):
    a = _lift(a)
    out_data = np.maximum(a.data, 0.0)

    def backward(g):
        _accumulate(a, g * (a.data > 0.0))

    return _make(out_data, (a,), backward)


def tanh(a):
    a = _lift(a)
    t = np.tanh(a.data)

    def backward(g):
        _accumulate(a, g * (1.0 - t * t))

    return _make(t, (a,), backward)


def sigmoid(a):
    a = _lift(a)
    s = 1.0 / (1.0 + np.exp(-a.data))

    def backward(g):
        _accumulate(a, g * s * (1.0 - s))

    return _make(s, (a,), backward)


def exp(a):
    a = _lift(a)
    e = np.exp(a.data)

    def backward(g):
        _accumulate(a, g * e)

    return _make(e, (a,), backward)


def log(a):
    a = _lift(a)

    def backward(g):
        _accumulate(a, g / a.data)

    return _make(np.log(a.data), (a,), backward)


def square(a):
    a = _lift(a)

    def backward(g):
        _accumulate(a, g * 2.0 * a.data)

    return _make(a.data * a.data, (a,), backward)


def clip(a, lo, hi):
    """Clamp values to [lo, hi]; gradient passes only where unclamped."""
    a = _lift(a)
    inside = (a.data > lo) & (a.data < hi)

    def backward(g):
        _accumulate(a, g * inside)

    return _make(np.clip(a.data, lo, hi), (a,), backward)


def xlogy(a, b):
    """a * log(b) with the convention 0 * log(anything) == 0."""
    a, b = _lift(a), _lift(b)
    _check_broadcast("xlogy", a, b)
    zero = a.data == 0.0
    forced = zero & (b.data <= 0.0)
    safe_b = np.where(forced, 1.0, b.data)
    out_data = np.where(zero, 0.0, a.data * np.log(safe_b))

    def backward(g):
        da = np.where(forced, 0.0, np.log(safe_b)) * g
        db = np.where(zero, 0.0, a.data / safe_b) * g
        _accumulate(a, _unbroadcast(da, a.data.shape))
        _accumulate(b, _unbroadcast(db, b.data.shape))

    return _make(out_data, (a, b), backward)


# ---------------------------------------------------------------------------
# softmax, reductions


def softmax(a):
    """Softmax over the last axis, shift-stabilized."""
    a = _lift(a)
    if not np.all(np.isfinite(a.data)):
        raise ValueError("softmax: input contains non-finite values")
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=-1, keepdims=True)

    def backward(g):
        inner = (g * s).sum(axis=-1, keepdims=True)
        _accumulate(a, s * (g - inner))

    return _make(s, (a,), backward)


def _normalize_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tsum(a, axis=None, keepdims=False):
    a = _lift(a)
    axes = _normalize_axis(axis, a.data.ndim)
    out_data = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axes) if axes else g
        _accumulate(a, np.broadcast_to(gg, a.data.shape).copy())

    return _make(out_data, (a,), backward)


def tmean(a, axis=None, keepdims=False):
    a = _lift(a)
    axes = _normalize_axis(axis, a.data.ndim)
    count = 1
    for ax in axes:
        count *= a.data.shape[ax]
    out_data = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g):
        gg = g
        if not keepdims:
            gg = np.expand_dims(g, axes) if axes else g
        _accumulate(a, np.broadcast_to(gg, a.data.shape) / count)

    return _make(out_data, (a,), backward)


# ---------------------------------------------------------------------------
# shape manipulation


def reshape(a, shape):
    a = _lift(a)
    old = a.data.shape

    def backward(g):
        _accumulate(a, g.reshape(old))

    return _make(a.data.reshape(shape), (a,), backward)


def transpose(a, axes):
    a = _lift(a)
    inverse = np.argsort(axes)

    def backward(g):
        _accumulate(a, g.transpose(inverse))

    return _make(a.data.transpose(axes), (a,), backward)


def concat(tensors, axis=0):
    tensors = [_lift(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    out_data = np.concatenate([t.data for t in tensors], axis=axis)
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        for t, start, stop in zip(tensors, offsets[:-1], offsets[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(start, stop)
            _accumulate(t, g[tuple(sl)])

    return _make(out_data, tuple(tensors), backward)


# ---------------------------------------------------------------------------
# linear algebra, convolution, lookup


def matmul(a, b):
    a, b = _lift(a), _lift(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError(
            f"matmul: expected 2-D operands, got {a.shape} and {b.shape}"
        )
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul: inner dimensions differ, {a.shape} @ {b.shape}"
        )
    out_data = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)

    return _make(out_data, (a, b), backward)


def conv2d(x, w, pad=0):
    """Stride-1 2-D convolution with ``pad`` rings of zero padding.

    ``x`` is (B, H, W, Cin), ``w`` is (kh, kw, Cin, Cout); the result is
    (B, H + 2 pad - kh + 1, W + 2 pad - kw + 1, Cout).
    """
    x, w = _lift(x), _lift(w)
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(
            f"conv2d: expected image (B,H,W,Cin) and kernel (kh,kw,Cin,Cout), "
            f"got {x.shape} and {w.shape}"
        )
    if x.data.shape[3] != w.data.shape[2]:
        raise ShapeError(
            f"conv2d: channel mismatch, image {x.shape} vs kernel {w.shape}"
        )
    kh, kw, cin, cout = w.data.shape
    xp = np.pad(x.data, ((0, 0), (pad, pad), (pad, pad), (0, 0))) if pad else x.data
    b, hp, wp, _ = xp.shape
    oh, ow = hp - kh + 1, wp - kw + 1
    if oh < 1 or ow < 1:
        raise ShapeError(
            f"conv2d: kernel {w.shape} larger than padded image {xp.shape}"
        )
    # (B, OH, OW, Cin, kh, kw) -> columns (B*OH*OW, kh*kw*Cin)
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(b * oh * ow, kh * kw * cin)
    out_data = (cols @ w.data.reshape(kh * kw * cin, cout)).reshape(b, oh, ow, cout)

    def backward(g):
        gf = g.reshape(b * oh * ow, cout)
        if w.requires_grad:
            _accumulate(w, (cols.T @ gf).reshape(kh, kw, cin, cout))
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, i:i + oh, j:j + ow, :] += g @ w.data[i, j].T
            if pad:
                dxp = dxp[:, pad:-pad, pad:-pad, :]
            _accumulate(x, dxp)

    return _make(out_data, (x, w), backward)


def embedding(table, ids):
    """Row lookup ``table[ids]``; gradient scatter-adds into the table."""
    table = _lift(table)
    ids = np.asarray(ids)
    if not np.issubdtype(ids.dtype, np.integer):
        raise ShapeError("embedding: ids must be integers")
    if ids.size and (ids.min() < 0 or ids.max() >= table.data.shape[0]):
        raise ValueError(
            f"embedding: id out of range for table of {table.data.shape[0]} rows"
        )
    out_data = table.data[ids]

    def backward(g):
        if table.requires_grad:
            dt = np.zeros_like(table.data)
            np.add.at(dt, ids.reshape(-1), g.reshape(-1, table.data.shape[1]))
            _accumulate(table, dt)

    return _make(out_data, (table,), backward)


# ---------------------------------------------------------------------------
# backward pass and gradient checking


def backward(loss, free_graph=True):
    """Run one reverse sweep from a scalar ``loss`` over the recorded tape.

    Gradients accumulate additively into every reachable tensor with
    ``requires_grad``. With ``free_graph`` the tape is released afterwards,
    so a second backward through the same graph is impossible (grads stay).
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._backward is None:
        raise ValueError("backward on a tensor detached from the tape")

    order = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
    if free_graph:
        for node in order:
            node._parents = ()
            node._backward = None


def grad_check(f, x, step=1e-5):
    """Max relative error between analytic and central-difference gradients.

    ``f`` maps a Tensor to a scalar Tensor and must be deterministic. The
    error at each coordinate is |analytic - numeric| divided by
    (|analytic| + |numeric| + 1e-12); the maximum over coordinates returns.
    """
    base = np.array(x.data, dtype=np.float64)
    probe = Tensor(base.copy(), requires_grad=True)
    out = f(probe)
    if not np.all(np.isfinite(out.data)):
        raise ValueError("grad_check: f(x) is not finite")
    backward(out)
    analytic = (probe.grad if probe.grad is not None else np.zeros_like(base)).copy()

    numeric = np.zeros_like(base)
    flat = base.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        up = f(Tensor(base.copy())).item()
        flat[i] = keep - step
        down = f(Tensor(base.copy())).item()
        flat[i] = keep
        if not (np.isfinite(up) and np.isfinite(down)):
            raise ValueError("grad_check: f(x +/- step) is not finite")
        num_flat[i] = (up - down) / (2.0 * step)

    denom = np.abs(analytic) + np.abs(numeric) + 1e-12
    return float(np.max(np.abs(analytic - numeric) / denom))
