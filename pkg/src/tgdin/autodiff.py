"""Minimal reverse-mode tape over float64 numpy arrays.

Only the primitives the three model families need: affine maps,
gate nonlinearities, softmax attention, shape ops, reductions, the
throughput losses, and the queueing theory layer as a custom node.
Not a graph compiler; graphs are built eagerly per batch and freed
after backward.

Gradients accumulate in graph construction order, so repeated runs on
identical inputs are bit-identical.
"""

from __future__ import annotations

import numpy as np

from .core import SimConstants
from .theory import theory_forward, theory_vjp


class Var:
    """One tape node: a float64 array, its gradient, and a pullback."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    # -- arithmetic -------------------------------------------------------

    def __add__(self, other):
        return _binary(self, other, np.add,
                       lambda g, a, b: g, lambda g, a, b: g)

    __radd__ = __add__

    def __sub__(self, other):
        return _binary(self, other, np.subtract,
                       lambda g, a, b: g, lambda g, a, b: -g)

    def __rsub__(self, other):
        return _binary(self, other, lambda a, b: b - a,
                       lambda g, a, b: -g, lambda g, a, b: g)

    def __mul__(self, other):
        return _binary(self, other, np.multiply,
                       lambda g, a, b: g * b, lambda g, a, b: g * a)

    __rmul__ = __mul__

    def __truediv__(self, scalar):
        if isinstance(scalar, Var):
            raise TypeError("division is supported by constants only")
        return self * (1.0 / scalar)

    def __neg__(self):
        return self * (-1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- reductions / shape ----------------------------------------------

    def sum(self, axis=None, keepdims=False):
        out_val = self.value.sum(axis=axis, keepdims=keepdims)
        shape = self.value.shape

        def backward(g):
            if axis is None:
                _accum(self, np.broadcast_to(g, shape))
            else:
                gg = g if keepdims else np.expand_dims(g, axis)
                _accum(self, np.broadcast_to(gg, shape))
        return Var(out_val, (self,), backward)

    def mean(self):
        return self.sum() * (1.0 / self.value.size)

    def reshape(self, *shape):
        orig = self.value.shape
        out = Var(self.value.reshape(*shape), (self,),
                  lambda g: _accum(self, g.reshape(orig)))
        return out

    def transpose(self, axes):
        inv = np.argsort(axes)
        return Var(self.value.transpose(axes), (self,),
                   lambda g: _accum(self, g.transpose(inv)))


def _accum(var: Var, g: np.ndarray) -> None:
    if var.grad is None:
        var.grad = np.zeros_like(var.value)
    var.grad += g


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcast gradient back to ``shape``."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, s in enumerate(shape):
        if s == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _binary(a, b, fwd, da, db):
    a_var = a if isinstance(a, Var) else None
    b_var = b if isinstance(b, Var) else None
    av = a.value if a_var is not None else np.asarray(a, dtype=np.float64)
    bv = b.value if b_var is not None else np.asarray(b, dtype=np.float64)
    out_val = fwd(av, bv)
    parents = tuple(v for v in (a_var, b_var) if v is not None)

    def backward(g):
        if a_var is not None:
            _accum(a_var, _unbroadcast(da(g, av, bv), av.shape))
        if b_var is not None:
            _accum(b_var, _unbroadcast(db(g, av, bv), bv.shape))
    return Var(out_val, parents, backward)


def matmul(a: Var, b) -> Var:
    """Matrix product; supports stacked 3-D operands and shared 2-D weights."""
    b_var = b if isinstance(b, Var) else None
    bv = b.value if b_var is not None else np.asarray(b, dtype=np.float64)
    av = a.value
    out_val = av @ bv

    def backward(g):
        ga = g @ np.swapaxes(bv, -1, -2)
        _accum(a, _unbroadcast(ga, av.shape))
        if b_var is not None:
            gb = np.swapaxes(av, -1, -2) @ g
            _accum(b_var, _unbroadcast(gb, bv.shape))
    return Var(out_val, (a,) if b_var is None else (a, b_var), backward)


def _unary(x: Var, out_val, dfun) -> Var:
    return Var(out_val, (x,), lambda g: _accum(x, dfun(g)))


def relu(x: Var) -> Var:
    mask = x.value > 0
    return _unary(x, np.where(mask, x.value, 0.0), lambda g: g * mask)


def sigmoid(x: Var) -> Var:
    v = x.value
    out = np.where(v >= 0, 1.0 / (1.0 + np.exp(-np.abs(v))),
                   np.exp(-np.abs(v)) / (1.0 + np.exp(-np.abs(v))))
    return _unary(x, out, lambda g: g * out * (1.0 - out))


def tanh(x: Var) -> Var:
    out = np.tanh(x.value)
    return _unary(x, out, lambda g: g * (1.0 - out * out))


def softplus(x: Var) -> Var:
    out = np.logaddexp(0.0, x.value)
    sig = np.where(x.value >= 0, 1.0 / (1.0 + np.exp(-np.abs(x.value))),
                   np.exp(-np.abs(x.value)) / (1.0 + np.exp(-np.abs(x.value))))
    return _unary(x, out, lambda g: g * sig)


def log1p(x: Var) -> Var:
    return _unary(x, np.log1p(x.value), lambda g: g / (1.0 + x.value))


def softmax(x: Var, axis: int = -1) -> Var:
    shifted = x.value - x.value.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        dot = (g * out).sum(axis=axis, keepdims=True)
        _accum(x, out * (g - dot))
    return Var(out, (x,), backward)


def select(x: Var, axis: int, index: int) -> Var:
    """Take one slice along ``axis`` (the axis is removed)."""
    out_val = np.take(x.value, index, axis=axis)

    def backward(g):
        if x.grad is None:
            x.grad = np.zeros_like(x.value)
        idx = [slice(None)] * x.value.ndim
        idx[axis] = index
        x.grad[tuple(idx)] += g
    return Var(out_val, (x,), backward)


def stack(vars_: list[Var], axis: int = 1) -> Var:
    out_val = np.stack([v.value for v in vars_], axis=axis)

    def backward(g):
        pieces = np.split(g, len(vars_), axis=axis)
        for v, piece in zip(vars_, pieces):
            _accum(v, np.squeeze(piece, axis=axis))
    return Var(out_val, tuple(vars_), backward)


def smooth_l1(pred: Var, target: np.ndarray) -> Var:
    """Elementwise smooth-L1 with unit transition: 0.5 e^2 inside |e|<1."""
    e = pred.value - np.asarray(target, dtype=np.float64)
    inner = np.abs(e) < 1.0
    out = np.where(inner, 0.5 * e * e, np.abs(e) - 0.5)
    return _unary(pred, out, lambda g: g * np.where(inner, e, np.sign(e)))


def theory_node(d_hat: Var, capacity_mbps, buffer_mb, dt_s: float,
                consts: SimConstants) -> tuple[Var, Var, Var]:
    """Queueing theory layer as one tape node with its closed-form vjp.

    Returns (throughput, delay, loss) Vars; gradients flow back into
    ``d_hat`` through :func:`tgdin.theory.theory_vjp`.
    """
    out = theory_forward(d_hat.value, capacity_mbps, buffer_mb, dt_s, consts)
    stacked_val = np.stack(
        [out.throughput_mbps, out.delay_s, out.loss_frac], axis=0)

    def backward(g):
        _accum(d_hat, theory_vjp(d_hat.value, capacity_mbps, buffer_mb, dt_s,
                                 consts, g[0], g[1], g[2]))
    stacked = Var(stacked_val, (d_hat,), backward)
    return (select(stacked, 0, 0), select(stacked, 0, 1), select(stacked, 0, 2))


def backward(root: Var) -> None:
    """Reverse-mode sweep seeding d(root)/d(root) = 1."""
    if root.value.size != 1:
        raise ValueError("backward() expects a scalar root")
    topo: list[Var] = []
    seen: set[int] = set()
    stack_ = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack_.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack_.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)
