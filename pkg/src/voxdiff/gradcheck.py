"""Finite-difference verification of every differentiable op.

Relative error is measured as ``max|analytic - numeric| / max(max|numeric|, 1e-8)``
over all input elements, using central differences in 64-bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autograd as ag
from .nets import offset_reparam


@dataclass
class GradCheckResult:
    op: str
    trials: int
    max_rel_error: float
    tol: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tol


def numeric_grad(f: Callable[[Sequence[np.ndarray]], float], arrays: Sequence[np.ndarray],
                 h: float = 1e-5) -> list[np.ndarray]:
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            idx = it.multi_index
            orig = a[idx]
            a[idx] = orig + h
            fp = f(arrays)
            a[idx] = orig - h
            fm = f(arrays)
            a[idx] = orig
            g[idx] = (fp - fm) / (2 * h)
        grads.append(g)
    return grads


def check(fn: Callable[..., ag.Tensor], arrays: Sequence[np.ndarray], h: float = 1e-5) -> float:
    """Max relative error of ``fn``'s analytic gradient w.r.t. every input."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]

    def scalar(arrs):
        with ag.no_grad():
            return fn(*[ag.Tensor(a) for a in arrs]).item()

    ts = [ag.Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*ts)
    out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]
    numeric = numeric_grad(scalar, arrays, h)
    worst = 0.0
    for a, n in zip(analytic, numeric):
        err = np.max(np.abs(a - n)) / max(np.max(np.abs(n)), 1e-8)
        worst = max(worst, float(err))
    return worst


class _Projector:
    """Reduces a tensor to a scalar with a random weighting frozen on first use."""

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.w: np.ndarray | None = None

    def __call__(self, y: ag.Tensor) -> ag.Tensor:
        if self.w is None:
            self.w = self.rng.standard_normal(y.shape)
        return ag.sum_(ag.mul(y, self.w))


def _cases(rng: np.random.Generator) -> dict[str, tuple[Callable, list[np.ndarray]]]:
    """Fresh random instance of each op case: name -> (fn, inputs)."""
    n = rng.standard_normal
    seed = int(rng.integers(1 << 31))

    def p():
        return _Projector(np.random.default_rng(seed))

    prob = rng.uniform(0.05, 0.95, size=(3, 4))
    target = (rng.uniform(size=(3, 4)) > 0.5).astype(float)
    mask = (rng.uniform(size=(3, 4)) > 0.3).astype(float)
    return {
        "add": (lambda a, b, P=p(): P(ag.add(a, b)), [n((3, 4)), n((4,))]),
        "mul": (lambda a, b, P=p(): P(ag.mul(a, b)), [n((3, 4)), n((3, 1))]),
        "matmul": (lambda a, b, P=p(): P(ag.matmul(a, b)), [n((3, 4)), n((4, 2))]),
        "concat": (lambda a, b, P=p(): P(ag.concat([a, b], axis=1)), [n((2, 3)), n((2, 2))]),
        "reshape": (lambda a, P=p(): P(ag.reshape(a, (6, 2))), [n((3, 4))]),
        "transpose": (lambda a, P=p(): P(ag.transpose(a, (2, 0, 1))), [n((2, 3, 4))]),
        "slice": (lambda a, P=p(): P(ag.slice_(a, (slice(1, 3), slice(None, None, 2)))), [n((4, 5))]),
        "sigmoid": (lambda a, P=p(): P(ag.sigmoid(a)), [n((3, 4)) * 2]),
        "silu": (lambda a, P=p(): P(ag.silu(a)), [n((3, 4)) * 2]),
        "group_norm": (lambda x, g, b, P=p(): P(ag.group_norm(x, 2, g, b)), [n((4, 3, 3)), n(4), n(4)]),
        "linear": (lambda x, w, b, P=p(): P(ag.linear(x, w, b)), [n((2, 5)), n((3, 5)), n(3)]),
        "conv2d": (lambda x, w, b, P=p(): P(ag.conv2d(x, w, b, stride=2, pad=1)),
                   [n((2, 5, 5)), n((3, 2, 3, 3)), n(3)]),
        "conv3d": (lambda x, w, b, P=p(): P(ag.conv3d(x, w, b, stride=(1, 2, 1), pad=1)),
                   [n((2, 4, 4, 3)), n((2, 2, 3, 3, 3)), n(2)]),
        "conv_transpose2d": (lambda x, w, b, P=p(): P(ag.conv_transpose2d(x, w, b, stride=2)),
                             [n((2, 3, 3)), n((2, 3, 2, 2)), n(3)]),
        "conv_transpose3d": (lambda x, w, b, P=p(): P(ag.conv_transpose3d(x, w, b, stride=2, pad=1)),
                             [n((2, 2, 3, 2)), n((2, 2, 3, 3, 3)), n(2)]),
        "mean": (lambda a, P=p(): P(ag.mean(a, axis=1)), [n((3, 4))]),
        "sum": (lambda a: ag.sum_(ag.mul(a, a)), [n((3, 4))]),
        "mse": (lambda a, b: ag.mse(a, b), [n((3, 4)), n((3, 4))]),
        "l1": (lambda a, b: ag.l1(a, b), [n((3, 4)), n((3, 4))]),
        "l1_masked": (lambda a, b: ag.l1(a, b, mask=mask), [n((3, 4)), n((3, 4))]),
        "huber": (lambda a, b: ag.huber(a, b), [n((3, 4)) * 2, n((3, 4))]),
        "bce": (lambda q: ag.bce(q, ag.Tensor(target)), [prob]),
        "offset_reparam": (lambda a, P=p(): P(offset_reparam(a, 0.0625)), [n((3, 2, 2, 2))]),
    }


OPS = tuple(_cases(np.random.default_rng(0)).keys())


def run_gradchecks(trials: int = 10, tol: float = 1e-4, seed: int = 0,
                   ops: Sequence[str] | None = None) -> list[GradCheckResult]:
    rng = np.random.default_rng(seed)
    worst: dict[str, float] = {}
    for _ in range(trials):
        for name, (fn, arrays) in _cases(rng).items():
            if ops is not None and name not in ops:
                continue
            worst[name] = max(worst.get(name, 0.0), check(fn, arrays))
    return [GradCheckResult(k, trials, v, tol) for k, v in worst.items()]


def adjoint_gap(rng: np.random.Generator, nd: int = 3) -> float:
    """|<conv(x, k), y> - <x, conv_transpose(y, k)>| for random x, y, k."""
    cin, cout = 3, 2
    spatial = (5, 4, 3)[:nd] if nd == 3 else (6, 5)
    k = rng.standard_normal((cout, cin) + (3,) * nd)
    x = rng.standard_normal((cin,) + spatial)
    conv, convt = (ag.conv3d, ag.conv_transpose3d) if nd == 3 else (ag.conv2d, ag.conv_transpose2d)
    with ag.no_grad():
        y_shape = conv(ag.Tensor(x), ag.Tensor(k), stride=2, pad=1).shape
        y = rng.standard_normal(y_shape)
        lhs = np.sum(conv(ag.Tensor(x), ag.Tensor(k), stride=2, pad=1).data * y)
        out_pad = tuple(s - ((ys - 1) * 2 - 2 + 3) for s, ys in zip(spatial, y_shape[1:]))
        back = convt(ag.Tensor(y), ag.Tensor(k), stride=2, pad=1, output_padding=out_pad).data
    return abs(lhs - np.sum(x * back))
