"""Reverse-mode gradients checked against central finite differences."""

import numpy as np
import pytest

from bridgekit import autograd as ag
from bridgekit.errors import ContractError
from bridgekit.rng import RngStream


def fd_grad(f, x, h=1e-6):
    """Central-difference gradient of a scalar function of one array."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        xp, xm = x.copy(), x.copy()
        xp[idx] += h
        xm[idx] -= h
        g[idx] = (f(xp) - f(xm)) / (2 * h)
    return g


def check_unary(op, x, tol=1e-6):
    v = ag.Var(x)
    ag.mean(op(v)).backward()
    want = fd_grad(lambda a: float(np.mean(op(ag.Var(a)).value)), x)
    np.testing.assert_allclose(v.grad, want, rtol=tol, atol=tol)


class TestElementwiseOps:
    def test_add_broadcast(self):
        rng = RngStream(20, 0)
        a = ag.Var(rng.normals((3, 4)))
        b = ag.Var(rng.normals((4,)))
        ag.mean(ag.add(a, b)).backward()
        np.testing.assert_allclose(a.grad, np.full((3, 4), 1 / 12))
        np.testing.assert_allclose(b.grad, np.full((4,), 3 / 12))

    def test_sub_broadcast(self):
        rng = RngStream(20, 1)
        a = ag.Var(rng.normals((3, 4)))
        b = ag.Var(rng.normals((1, 4)))
        ag.mean(ag.sub(a, b)).backward()
        np.testing.assert_allclose(a.grad, np.full((3, 4), 1 / 12))
        np.testing.assert_allclose(b.grad, np.full((1, 4), -3 / 12))

    def test_mul(self):
        rng = RngStream(20, 2)
        av, bv = rng.normals((3, 4)), rng.normals((3, 4))
        a, b = ag.Var(av), ag.Var(bv)
        ag.mean(ag.mul(a, b)).backward()
        np.testing.assert_allclose(a.grad, bv / 12)
        np.testing.assert_allclose(b.grad, av / 12)

    def test_mul_scalar_broadcast(self):
        a = ag.Var(np.array([[1.0, 2.0], [3.0, 4.0]]))
        s = ag.Var(np.array(2.0))
        ag.mean(ag.mul(a, s)).backward()
        np.testing.assert_allclose(s.grad, np.array(2.5))

    def test_relu_fd(self):
        # keep values away from the kink
        x = RngStream(20, 3).normals((5, 5))
        x = np.where(np.abs(x) < 0.05, 0.2, x)
        check_unary(ag.relu, x)

    def test_silu_fd(self):
        check_unary(ag.silu, RngStream(20, 4).normals((5, 5)))

    def test_relu_zero_region(self):
        v = ag.Var(np.array([-1.0, -2.0]))
        ag.mean(ag.relu(v)).backward()
        np.testing.assert_array_equal(v.grad, np.zeros(2))


class TestMatmulAndShapes:
    def test_matmul_fd(self):
        rng = RngStream(21, 0)
        av, bv = rng.normals((3, 4)), rng.normals((4, 2))
        a, b = ag.Var(av), ag.Var(bv)
        ag.mean(ag.matmul(a, b)).backward()
        ga = fd_grad(lambda m: float(np.mean(m @ bv)), av)
        gb = fd_grad(lambda m: float(np.mean(av @ m)), bv)
        np.testing.assert_allclose(a.grad, ga, rtol=1e-6, atol=1e-8)
        np.testing.assert_allclose(b.grad, gb, rtol=1e-6, atol=1e-8)

    def test_reshape_routes_gradient(self):
        v = ag.Var(RngStream(21, 1).normals((2, 6)))
        ag.mean(ag.reshape(v, (3, 4))).backward()
        np.testing.assert_allclose(v.grad, np.full((2, 6), 1 / 12))

    def test_concat_splits_gradient(self):
        a = ag.Var(RngStream(21, 2).normals((2, 3)))
        b = ag.Var(RngStream(21, 3).normals((2, 5)))
        out = ag.concat([a, b], axis=1)
        assert out.shape == (2, 8)
        ag.mean(ag.mul(out, out)).backward()
        np.testing.assert_allclose(a.grad, 2 * a.value / 16, rtol=1e-12)
        np.testing.assert_allclose(b.grad, 2 * b.value / 16, rtol=1e-12)

    def test_mean_fd(self):
        check_unary(ag.mean, RngStream(21, 4).normals((4, 4)))

    def test_upsample_fd(self):
        x = RngStream(21, 5).normals((1, 2, 3, 3))
        v = ag.Var(x)
        up = ag.upsample_nearest2(v)
        assert up.shape == (1, 2, 6, 6)
        ag.mean(ag.mul(up, up)).backward()
        want = fd_grad(
            lambda a: float(np.mean(np.repeat(np.repeat(a, 2, axis=2), 2, axis=3) ** 2)), x
        )
        np.testing.assert_allclose(v.grad, want, rtol=1e-5, atol=1e-8)

    def test_upsample_needs_4d(self):
        with pytest.raises(ContractError):
            ag.upsample_nearest2(ag.Var(np.zeros((2, 3))))


class TestConvOp:
    def test_conv_fd_all_parents(self):
        rng = RngStream(22, 0)
        xv = rng.normals((2, 2, 4, 4))
        wv = rng.normals((3, 2, 3, 3))
        bv = rng.normals((3,))
        x, w, b = ag.Var(xv), ag.Var(wv), ag.Var(bv)
        out = ag.conv2d(x, w, b, stride=1, pad=1)
        ag.mean(ag.mul(out, out)).backward()

        def loss(xa, wa, ba):
            from bridgekit.kernels import conv2d_forward
            return float(np.mean(conv2d_forward(xa, wa, ba, 1, 1) ** 2))

        gx = fd_grad(lambda a: loss(a, wv, bv), xv)
        gw = fd_grad(lambda a: loss(xv, a, bv), wv)
        gb = fd_grad(lambda a: loss(xv, wv, a), bv)
        np.testing.assert_allclose(x.grad, gx, rtol=1e-4, atol=1e-6)
        np.testing.assert_allclose(w.grad, gw, rtol=1e-4, atol=1e-6)
        np.testing.assert_allclose(b.grad, gb, rtol=1e-4, atol=1e-6)


class TestGraphMechanics:
    def test_shared_parent_accumulates(self):
        a = ag.Var(np.array([3.0]))
        ag.mean(ag.mul(a, a)).backward()
        np.testing.assert_allclose(a.grad, np.array([6.0]))

    def test_diamond_graph(self):
        # z = a*a + a, dz/da = 2a + 1
        a = ag.Var(np.array([2.0]))
        ag.mean(ag.add(ag.mul(a, a), a)).backward()
        np.testing.assert_allclose(a.grad, np.array([5.0]))

    def test_two_layer_chain_fd(self):
        rng = RngStream(23, 0)
        xv = rng.normals((4, 3))
        w1v, b1v = rng.normals((3, 5)), rng.normals((5,))
        w2v, b2v = rng.normals((5, 2)), rng.normals((2,))

        def forward(w1):
            h = np.maximum(xv @ w1 + b1v, 0.0)
            s = 1.0 / (1.0 + np.exp(-(h @ w2v + b2v)))
            return float(np.mean((h @ w2v + b2v) * s))

        w1 = ag.Var(w1v)
        h = ag.relu(ag.add(ag.matmul(ag.Var(xv), w1), ag.Var(b1v)))
        out = ag.silu(ag.add(ag.matmul(h, ag.Var(w2v)), ag.Var(b2v)))
        ag.mean(out).backward()
        np.testing.assert_allclose(w1.grad, fd_grad(forward, w1v), rtol=1e-5, atol=1e-7)

    def test_operator_sugar(self):
        a = ag.Var(np.array([1.0, 2.0]))
        b = ag.Var(np.array([3.0, 4.0]))
        out = a * b + a - b
        np.testing.assert_array_equal(out.value, np.array([1.0, 6.0]))
        ag.mean(out).backward()
        np.testing.assert_allclose(a.grad, (b.value + 1.0) / 2)
        np.testing.assert_allclose(b.grad, (a.value - 1.0) / 2)

    def test_backward_needs_scalar(self):
        with pytest.raises(ContractError):
            ag.Var(np.zeros((2, 2))).backward()

    def test_deep_chain_does_not_recurse(self):
        # iterative topo sweep: depth well past the default interpreter limit
        v = ag.Var(np.array([1.0]))
        out = v
        for _ in range(3000):
            out = ag.add(out, ag.Var(np.array([0.0])))
        ag.mean(out).backward()
        np.testing.assert_allclose(v.grad, np.array([1.0]))
