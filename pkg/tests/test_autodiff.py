"""Per-primitive gradient checks for the tape."""

import numpy as np
import pytest

from tgdin import autodiff as ad
from tgdin.autodiff import Var
from tgdin.core import SimConstants


def grad_of(build, x_val, h=1e-6):
    """Analytic and central-difference gradients of sum(build(x))."""
    x = Var(x_val)
    out = build(x).sum()
    ad.backward(out)
    analytic = x.grad.copy()
    fd = np.zeros_like(x_val)
    flat = x_val.reshape(-1)
    for i in range(flat.size):
        xp = x_val.copy().reshape(-1); xp[i] += h
        xm = x_val.copy().reshape(-1); xm[i] -= h
        fp = float(build(Var(xp.reshape(x_val.shape))).sum().value)
        fm = float(build(Var(xm.reshape(x_val.shape))).sum().value)
        fd.reshape(-1)[i] = (fp - fm) / (2 * h)
    return analytic, fd


UNARY = [
    ("relu", ad.relu),
    ("sigmoid", ad.sigmoid),
    ("tanh", ad.tanh),
    ("softplus", ad.softplus),
    ("log1p", ad.log1p),
    ("softmax", lambda x: ad.softmax(x, axis=-1)),
]


@pytest.mark.parametrize("name,fn", UNARY, ids=[n for n, _ in UNARY])
def test_unary_gradients(name, fn, rng):
    x = rng.uniform(0.1, 2.0, (3, 4))
    w = rng.standard_normal((3, 4))
    analytic, fd = grad_of(lambda v: fn(v) * w, x)
    assert np.allclose(analytic, fd, rtol=1e-4, atol=1e-7)


def test_binary_gradients(rng):
    a_val = rng.uniform(0.5, 2.0, (3, 4))
    b_val = rng.uniform(0.5, 2.0, (3, 4))
    for build in (lambda x: x * b_val, lambda x: x + b_val,
                  lambda x: x - b_val, lambda x: (x * x) * 0.5):
        analytic, fd = grad_of(build, a_val)
        assert np.allclose(analytic, fd, rtol=1e-5, atol=1e-8)


def test_bias_broadcast_gradient(rng):
    x = rng.standard_normal((5, 3))
    b = Var(rng.standard_normal(3))
    out = (Var(x) + b).sum()
    ad.backward(out)
    assert np.allclose(b.grad, 5 * np.ones(3))


def test_matmul_gradients(rng):
    x = rng.standard_normal((4, 3))
    w_val = rng.standard_normal((3, 2))
    analytic, fd = grad_of(lambda v: ad.matmul(v, w_val), x)
    assert np.allclose(analytic, fd, rtol=1e-5, atol=1e-8)
    # weight side, including broadcast over a stacked operand
    w = Var(w_val)
    x3 = rng.standard_normal((2, 4, 3))
    out = ad.matmul(Var(x3), w).sum()
    ad.backward(out)
    fd = np.zeros_like(w_val)
    h = 1e-6
    for i in range(w_val.size):
        wp = w_val.copy().reshape(-1); wp[i] += h
        wm = w_val.copy().reshape(-1); wm[i] -= h
        fd.reshape(-1)[i] = ((x3 @ wp.reshape(3, 2)).sum()
                             - (x3 @ wm.reshape(3, 2)).sum()) / (2 * h)
    assert np.allclose(w.grad, fd, rtol=1e-5, atol=1e-8)


def test_shape_op_gradients(rng):
    x = rng.standard_normal((2, 3, 4))
    w = rng.standard_normal((4, 3, 2))
    analytic, fd = grad_of(lambda v: v.transpose((2, 1, 0)) * w, x)
    assert np.allclose(analytic, fd, rtol=1e-5, atol=1e-8)
    w2 = rng.standard_normal((6, 4))
    analytic, fd = grad_of(lambda v: v.reshape(6, 4) * w2, x)
    assert np.allclose(analytic, fd, rtol=1e-5, atol=1e-8)


def test_select_and_stack_gradients(rng):
    x = rng.standard_normal((3, 4, 5))

    def build(v):
        parts = [ad.select(v, 1, i) * float(i + 1) for i in range(4)]
        return ad.stack(parts, axis=1)
    analytic, fd = grad_of(build, x)
    assert np.allclose(analytic, fd, rtol=1e-5, atol=1e-8)


def test_smooth_l1_gradient(rng):
    x = rng.uniform(-3, 3, 50)
    target = rng.uniform(-3, 3, 50)
    # keep away from the |e| = 1 transition
    mask = np.abs(np.abs(x - target) - 1.0) < 1e-3
    x[mask] += 0.01
    analytic, fd = grad_of(lambda v: ad.smooth_l1(v, target), x)
    assert np.allclose(analytic, fd, rtol=1e-4, atol=1e-7)


def test_sum_axis_gradient(rng):
    x = rng.standard_normal((3, 4, 2))
    w = rng.standard_normal((3, 2))
    analytic, fd = grad_of(lambda v: v.sum(axis=1) * w, x)
    assert np.allclose(analytic, fd, rtol=1e-5, atol=1e-8)


def test_theory_node_gradient(consts, rng):
    d_val = rng.uniform(1, 40, (6, 2))
    C = rng.uniform(5, 150, 6)
    B = rng.uniform(0, 4, (6, 2))
    w_r = rng.standard_normal((6, 2))
    w_t = rng.standard_normal((6, 2))
    w_l = rng.standard_normal((6, 2))

    def build(v):
        r, tau, loss = ad.theory_node(v, C, B, 0.2, consts)
        return r * w_r + tau * w_t + loss * w_l

    analytic, fd = grad_of(build, d_val, h=1e-5)
    assert np.allclose(analytic, fd, rtol=1e-3, atol=1e-5)


def test_determinism(rng):
    x = rng.standard_normal((4, 4))
    def run():
        v = Var(x)
        out = (ad.tanh(v @ x) * 2.0 + ad.sigmoid(v)).sum()
        ad.backward(out)
        return v.grad.copy()
    assert np.array_equal(run(), run())


def test_backward_requires_scalar():
    with pytest.raises(ValueError):
        ad.backward(Var(np.zeros(3)))


def test_diamond_graph_accumulation():
    x = Var(np.array([2.0]))
    y = x * 3.0
    z = y + y * y   # y used twice
    ad.backward(z.sum())
    # dz/dx = 3 + 2*y*3 = 3 + 36 = 39
    assert np.allclose(x.grad, [39.0])
