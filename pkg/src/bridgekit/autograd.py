"""Tiny reverse-mode autodiff over numpy arrays.

A Var wraps a float64 array plus a closure that routes the incoming
gradient to its parents. backward() runs an iterative topological sweep,
so graph depth is not limited by the interpreter stack. Only the ops the
score networks need exist here; all of them are deterministic, and the
conv op dispatches into the dual-backend kernels.
"""

from __future__ import annotations

import numpy as np

from .errors import ContractError
from .kernels import conv2d_forward, conv2d_input_grad, conv2d_weight_grad


class Var:
    __slots__ = ("value", "grad", "_parents", "_bw")

    def __init__(self, value, parents=(), bw=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._bw = bw

    @property
    def shape(self):
        return self.value.shape

    def backward(self):
        if self.value.size != 1:
            raise ContractError(f"backward() needs a scalar root, got shape {self.value.shape}")
        topo = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                stack.append((p, False))
        self.grad = np.ones_like(self.value)
        for node in reversed(topo):
            if node._bw is not None and node.grad is not None:
                node._bw(node.grad)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _accum(var: Var, g: np.ndarray):
    if var.grad is None:
        var.grad = g.copy()
    else:
        var.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Reduce g back to a parent's shape after numpy broadcasting."""
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value + b.value, (a, b))

    def bw(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(g, b.value.shape))

    out._bw = bw
    return out


def sub(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value - b.value, (a, b))

    def bw(g):
        _accum(a, _unbroadcast(g, a.value.shape))
        _accum(b, _unbroadcast(-g, b.value.shape))

    out._bw = bw
    return out


def mul(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value * b.value, (a, b))

    def bw(g):
        _accum(a, _unbroadcast(g * b.value, a.value.shape))
        _accum(b, _unbroadcast(g * a.value, b.value.shape))

    out._bw = bw
    return out


def matmul(a: Var, b: Var) -> Var:
    a, b = as_var(a), as_var(b)
    out = Var(a.value @ b.value, (a, b))

    def bw(g):
        _accum(a, g @ b.value.T)
        _accum(b, a.value.T @ g)

    out._bw = bw
    return out


def relu(a: Var) -> Var:
    a = as_var(a)
    mask = a.value > 0.0
    out = Var(np.where(mask, a.value, 0.0), (a,))

    def bw(g):
        _accum(a, np.where(mask, g, 0.0))

    out._bw = bw
    return out


def silu(a: Var) -> Var:
    a = as_var(a)
    s = 1.0 / (1.0 + np.exp(-a.value))
    out = Var(a.value * s, (a,))

    def bw(g):
        _accum(a, g * s * (1.0 + a.value * (1.0 - s)))

    out._bw = bw
    return out


def mean(a: Var) -> Var:
    a = as_var(a)
    out = Var(np.array(a.value.mean()), (a,))

    def bw(g):
        _accum(a, np.full_like(a.value, float(g) / a.value.size))

    out._bw = bw
    return out


def reshape(a: Var, shape) -> Var:
    a = as_var(a)
    out = Var(a.value.reshape(shape), (a,))

    def bw(g):
        _accum(a, g.reshape(a.value.shape))

    out._bw = bw
    return out


def concat(vars_, axis: int = 1) -> Var:
    vars_ = [as_var(v) for v in vars_]
    sizes = [v.value.shape[axis] for v in vars_]
    out = Var(np.concatenate([v.value for v in vars_], axis=axis), tuple(vars_))

    def bw(g):
        pieces = np.split(g, np.cumsum(sizes)[:-1], axis=axis)
        for v, piece in zip(vars_, pieces):
            _accum(v, piece)

    out._bw = bw
    return out


def conv2d(x: Var, w: Var, b: Var, stride: int = 1, pad: int = 1) -> Var:
    x, w, b = as_var(x), as_var(w), as_var(b)
    out = Var(conv2d_forward(x.value, w.value, b.value, stride, pad), (x, w, b))

    def bw(g):
        _accum(x, conv2d_input_grad(g, w.value, x.value.shape, stride, pad))
        gw, gb = conv2d_weight_grad(g, x.value, w.value.shape, stride, pad)
        _accum(w, gw)
        _accum(b, gb)

    out._bw = bw
    return out


def upsample_nearest2(a: Var) -> Var:
    a = as_var(a)
    if a.value.ndim != 4:
        raise ContractError(f"upsample expects (B,C,H,W), got shape {a.value.shape}")
    out = Var(np.repeat(np.repeat(a.value, 2, axis=2), 2, axis=3), (a,))

    def bw(g):
        B, C, H2, W2 = g.shape
        _accum(a, g.reshape(B, C, H2 // 2, 2, W2 // 2, 2).sum(axis=(3, 5)))

    out._bw = bw
    return out
