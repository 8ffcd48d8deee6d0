"""Dense reverse-mode differentiable arrays on top of numpy.

Every op records its parents and a closure that maps the output gradient to
parent gradients. ``backward`` walks the graph once in reverse topological
order and then frees it, so a second call on the same output raises.
"""
from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

_GRAD_ENABLED = True


class ShapeError(ValueError):
    """Raised when an op receives incompatible shapes."""


@contextlib.contextmanager
def no_grad():
    """Disable graph recording (inference, parameter updates)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64) if not isinstance(data, np.ndarray) else data
        if self.data.dtype.kind != "f":
            self.data = self.data.astype(np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self._consumed = False
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
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{tag}, requires_grad={self.requires_grad})"

    # operator sugar
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

    def __getitem__(self, index):
        return slice_(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: Iterable[Tensor], fn) -> Tensor:
    parents = tuple(parents)
    needs = _GRAD_ENABLED and any(p.requires_grad for p in parents)
    out = Tensor(data, requires_grad=needs)
    if needs:
        out._parents = parents
        out._backward = fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(out: Tensor) -> None:
    """Populate ``.grad`` on every reachable tensor that requires it."""
    if out.size != 1:
        raise ShapeError(f"backward: output must be a scalar, got shape {out.shape}")
    if out._consumed:
        raise RuntimeError("backward: graph already consumed; rebuild the forward pass")
    if not out.requires_grad:
        raise RuntimeError("backward: output does not depend on any parameter")

    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(out, False)]
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

    grads: dict[int, np.ndarray] = {id(out): np.ones_like(out.data)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._consumed:
            raise RuntimeError("backward: graph already consumed; rebuild the forward pass")
        if node._backward is None:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for p, pg in zip(node._parents, node._backward(g)):
            if pg is None or not p.requires_grad:
                continue
            key = id(p)
            grads[key] = pg if key not in grads else grads[key] + pg
        node._backward = None
        node._parents = ()
        node._consumed = True
    out._consumed = True


# elementwise ------------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def sigmoid(x: Tensor) -> Tensor:
    s = expit(x.data)
    return _make(s, (x,), lambda g: (g * s * (1.0 - s),))


def silu(x: Tensor) -> Tensor:
    s = expit(x.data)
    return _make(x.data * s, (x,), lambda g: (g * (s + x.data * s * (1.0 - s)),))


def relu(x: Tensor) -> Tensor:
    pos = x.data > 0
    return _make(np.where(pos, x.data, 0.0), (x,), lambda g: (g * pos,))


# linear algebra / shape --------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    return _make(a.data @ b.data, (a, b), lambda g: (g @ b.data.T, a.data.T @ g))


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ w.T + b`` for ``x`` of shape (in,) or (n, in) and ``w`` of shape (out, in)."""
    if x.shape[-1] != w.shape[1]:
        raise ShapeError(f"linear: input {x.shape} does not match weight {w.shape}")
    y = x.data @ w.data.T
    if b is not None:
        y = y + b.data

    def bwd(g):
        gx = g @ w.data
        gw = np.outer(g, x.data) if x.ndim == 1 else g.T @ x.data
        gb = None if b is None else (g if g.ndim == 1 else g.sum(axis=0))
        return gx, gw, gb

    parents = (x, w) if b is None else (x, w, b)
    return _make(y, parents, bwd)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        y = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot reshape {x.shape} to {shape}") from exc
    return _make(y, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        y = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: shapes {[t.shape for t in tensors]} along axis {axis}") from exc
    cuts = np.cumsum([t.shape[axis] for t in tensors])[:-1]
    return _make(y, tensors, lambda g: tuple(np.split(g, cuts, axis=axis)))


def slice_(x: Tensor, index) -> Tensor:
    y = x.data[index]

    def bwd(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g) if _has_fancy(index) else gx.__setitem__(index, g)
        return (gx,)

    return _make(np.array(y, copy=True), (x,), bwd)


def _has_fancy(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return any(isinstance(i, (list, np.ndarray)) for i in items)


# reductions -----------------------------------------------------------------

def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(np.asarray(y), (x,), bwd)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum_(x, axis=axis, keepdims=keepdims), 1.0 / n)


# normalization ---------------------------------------------------------------

def group_norm(x: Tensor, groups: int, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Group normalization over a (C, *spatial) array with per-channel affine."""
    c = x.shape[0]
    if c % groups:
        raise ShapeError(f"group_norm: {c} channels not divisible into {groups} groups")
    xg = x.data.reshape(groups, -1)
    mu = xg.mean(axis=1, keepdims=True)
    var = xg.var(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(x.shape)
    bshape = (c,) + (1,) * (x.ndim - 1)
    y = xhat * gamma.data.reshape(bshape) + beta.data.reshape(bshape)

    def bwd(g):
        gxhat = (g * gamma.data.reshape(bshape)).reshape(groups, -1)
        xh = xhat.reshape(groups, -1)
        gx = inv * (gxhat - gxhat.mean(axis=1, keepdims=True)
                    - xh * (gxhat * xh).mean(axis=1, keepdims=True))
        axes = tuple(range(1, x.ndim))
        return gx.reshape(x.shape), (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _make(y, (x, gamma, beta), bwd)


# convolution ---------------------------------------------------------------

def _tuplify(v, nd: int) -> tuple[int, ...]:
    return tuple(v) if isinstance(v, (tuple, list)) else (int(v),) * nd


def _im2col(xp: np.ndarray, ksize, stride, out_shape) -> np.ndarray:
    """(C, *padded) -> (C * K, N) gathering every kernel tap for every output site."""
    c = xp.shape[0]
    k_total = int(np.prod(ksize))
    cols = np.empty((c, k_total) + tuple(out_shape), dtype=xp.dtype)
    for k, offs in enumerate(np.ndindex(*ksize)):
        sl = tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offs, stride, out_shape))
        cols[:, k] = xp[(slice(None),) + sl]
    return cols.reshape(c * k_total, -1)


def _col2im(cols: np.ndarray, c: int, padded_shape, ksize, stride, out_shape) -> np.ndarray:
    """Adjoint of ``_im2col``: scatter-add taps back onto the padded grid."""
    k_total = int(np.prod(ksize))
    cols = cols.reshape((c, k_total) + tuple(out_shape))
    xp = np.zeros((c,) + tuple(padded_shape), dtype=cols.dtype)
    for k, offs in enumerate(np.ndindex(*ksize)):
        sl = tuple(slice(o, o + s * (n - 1) + 1, s) for o, s, n in zip(offs, stride, out_shape))
        xp[(slice(None),) + sl] += cols[:, k]
    return xp


def _conv_nd(x: Tensor, w: Tensor, b: Tensor | None, stride, pad, nd: int, opname: str) -> Tensor:
    if x.ndim != nd + 1 or w.ndim != nd + 2 or x.shape[0] != w.shape[1]:
        raise ShapeError(f"{opname}: input {x.shape} incompatible with weight {w.shape}")
    stride, pad = _tuplify(stride, nd), _tuplify(pad, nd)
    ksize = w.shape[2:]
    cout, cin = w.shape[:2]
    spatial = x.shape[1:]
    padded = tuple(n + 2 * p for n, p in zip(spatial, pad))
    out_shape = tuple((n - k) // s + 1 for n, k, s in zip(padded, ksize, stride))
    if min(out_shape) < 1:
        raise ShapeError(f"{opname}: kernel {ksize} larger than padded input {padded}")
    xp = np.pad(x.data, ((0, 0),) + tuple((p, p) for p in pad)) if any(pad) else x.data
    cols = _im2col(xp, ksize, stride, out_shape)
    w2 = w.data.reshape(cout, -1)
    y = w2 @ cols
    if b is not None:
        y += b.data[:, None]
    y = y.reshape((cout,) + out_shape)
    crop = (slice(None),) + tuple(slice(p, p + n) for p, n in zip(pad, spatial))

    def bwd(g):
        g2 = g.reshape(cout, -1)
        gw = (g2 @ cols.T).reshape(w.shape)
        gx = _col2im(w2.T @ g2, cin, padded, ksize, stride, out_shape)[crop] if x.requires_grad else None
        gb = None if b is None else g2.sum(axis=1)
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return _make(y, parents, bwd)


def _conv_transpose_nd(x: Tensor, w: Tensor, b: Tensor | None, stride, pad, output_padding,
                       nd: int, opname: str) -> Tensor:
    if x.ndim != nd + 1 or w.ndim != nd + 2 or x.shape[0] != w.shape[0]:
        raise ShapeError(f"{opname}: input {x.shape} incompatible with weight {w.shape}")
    stride, pad = _tuplify(stride, nd), _tuplify(pad, nd)
    output_padding = _tuplify(output_padding, nd)
    ksize = w.shape[2:]
    cin, cout = w.shape[:2]
    in_shape = x.shape[1:]
    full = tuple((n - 1) * s + k + op for n, s, k, op in zip(in_shape, stride, ksize, output_padding))
    out_shape = tuple(f - 2 * p for f, p in zip(full, pad))
    if min(out_shape) < 1:
        raise ShapeError(f"{opname}: non-positive output shape {out_shape}")
    w2 = w.data.reshape(cin, -1)
    xf = x.data.reshape(cin, -1)
    y = _col2im(w2.T @ xf, cout, full, ksize, stride, in_shape)
    crop = (slice(None),) + tuple(slice(p, p + n) for p, n in zip(pad, out_shape))
    y = y[crop]
    if b is not None:
        y = y + b.data.reshape((cout,) + (1,) * nd)

    def bwd(g):
        gfull = np.zeros((cout,) + full)
        gfull[crop] = g
        gcols = _im2col(gfull, ksize, stride, in_shape)
        gx = (w2 @ gcols).reshape(x.shape) if x.requires_grad else None
        gw = (xf @ gcols.T).reshape(w.shape)
        gb = None if b is None else g.reshape(cout, -1).sum(axis=1)
        return (gx, gw) if b is None else (gx, gw, gb)

    parents = (x, w) if b is None else (x, w, b)
    return _make(np.ascontiguousarray(y), parents, bwd)


def conv2d(x, w, b=None, stride=1, pad=0) -> Tensor:
    """x: (Cin, H, W); w: (Cout, Cin, kh, kw)."""
    return _conv_nd(x, w, b, stride, pad, 2, "conv2d")


def conv3d(x, w, b=None, stride=1, pad=0) -> Tensor:
    """x: (Cin, D1, D2, D3); w: (Cout, Cin, k1, k2, k3)."""
    return _conv_nd(x, w, b, stride, pad, 3, "conv3d")


def conv_transpose2d(x, w, b=None, stride=1, pad=0, output_padding=0) -> Tensor:
    """x: (Cin, H, W); w: (Cin, Cout, kh, kw)."""
    return _conv_transpose_nd(x, w, b, stride, pad, output_padding, 2, "conv_transpose2d")


def conv_transpose3d(x, w, b=None, stride=1, pad=0, output_padding=0) -> Tensor:
    """x: (Cin, D1, D2, D3); w: (Cin, Cout, k1, k2, k3). Adjoint of ``conv3d`` with the same weight."""
    return _conv_transpose_nd(x, w, b, stride, pad, output_padding, 3, "conv_transpose3d")


# losses ---------------------------------------------------------------------

def _check_same(opname: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{opname}: shape mismatch {a.shape} vs {b.shape}")


def _masked_count(mask: np.ndarray | None, shape) -> float:
    if mask is None:
        return float(np.prod(shape))
    return float(np.broadcast_to(mask, shape).sum())


def mse(a, b, mask: np.ndarray | None = None) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same("mse", a, b)
    d = a.data - b.data
    w = 1.0 if mask is None else mask
    n = max(_masked_count(mask, a.shape), 1.0)
    val = np.sum(w * d * d) / n
    return _make(np.asarray(val), (a, b), lambda g: (2.0 * g * w * d / n, -2.0 * g * w * d / n))


def l1(a, b, mask: np.ndarray | None = None) -> Tensor:
    """Mean absolute difference, optionally restricted to ``mask`` (broadcastable to ``a``)."""
    a, b = as_tensor(a), as_tensor(b)
    _check_same("l1", a, b)
    d = a.data - b.data
    w = 1.0 if mask is None else mask
    n = max(_masked_count(mask, a.shape), 1.0)
    val = np.sum(w * np.abs(d)) / n
    sgn = np.sign(d)
    return _make(np.asarray(val), (a, b), lambda g: (g * w * sgn / n, -g * w * sgn / n))


def huber(a, b, delta: float = 1.0) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_same("huber", a, b)
    d = a.data - b.data
    ad = np.abs(d)
    small = ad <= delta
    val = np.where(small, 0.5 * d * d, delta * (ad - 0.5 * delta)).mean()
    dd = np.where(small, d, delta * np.sign(d)) / d.size
    return _make(np.asarray(val), (a, b), lambda g: (g * dd, -g * dd))


BCE_CLAMP = 1e-7


def bce(prob, target, eps: float = BCE_CLAMP) -> Tensor:
    """Binary cross-entropy with mean reduction; probabilities clamped to [eps, 1 - eps]."""
    prob, target = as_tensor(prob), as_tensor(target)
    _check_same("bce", prob, target)
    p = np.clip(prob.data, eps, 1.0 - eps)
    t = target.data
    n = p.size
    val = -np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p))
    live = (prob.data > eps) & (prob.data < 1.0 - eps)

    def bwd(g):
        gp = -g * (t / p - (1.0 - t) / (1.0 - p)) / n * live
        gt = -g * (np.log(p) - np.log1p(-p)) / n
        return gp, gt

    return _make(np.asarray(val), (prob, target), bwd)
