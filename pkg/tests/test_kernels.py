"""Hot kernels against brute-force references, plus backend parity."""

import numpy as np
import pytest

from bridgekit import backend, kernels
from bridgekit.errors import ContractError
from bridgekit.rng import RngStream


def conv2d_reference(x, w, bias, stride, pad):
    """Direct quadruple loop, no cleverness."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    ho = (h + 2 * pad - kh) // stride + 1
    wo = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((n, cout, ho, wo))
    for b in range(n):
        for co in range(cout):
            for i in range(ho):
                for j in range(wo):
                    patch = xp[b, :, i * stride:i * stride + kh, j * stride:j * stride + kw]
                    out[b, co, i, j] = np.sum(patch * w[co]) + bias[co]
    return out


def median2d_reference(img, radius):
    h, w = img.shape
    padded = np.pad(img, radius, mode="reflect")
    out = np.empty_like(img)
    for i in range(h):
        for j in range(w):
            window = padded[i:i + 2 * radius + 1, j:j + 2 * radius + 1]
            out[i, j] = np.median(window)
    return out


@pytest.fixture(autouse=True)
def numpy_backend():
    before = backend.active_backend()
    backend.set_backend("numpy")
    yield
    backend.set_backend(before)


class TestConvForward:
    @pytest.mark.parametrize("stride", [1, 2])
    @pytest.mark.parametrize("pad", [0, 1])
    def test_matches_reference(self, stride, pad):
        rng = RngStream(11, 0)
        x = rng.normals((2, 3, 6, 6))
        w = rng.normals((4, 3, 3, 3))
        bias = rng.normals((4,))
        got = kernels.conv2d_forward(x, w, bias, stride=stride, pad=pad)
        want = conv2d_reference(x, w, bias, stride, pad)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=1e-12)

    def test_one_by_one_kernel_is_channel_mix(self):
        rng = RngStream(12, 0)
        x = rng.normals((1, 2, 4, 4))
        w = rng.normals((3, 2, 1, 1))
        bias = np.zeros(3)
        got = kernels.conv2d_forward(x, w, bias, stride=1, pad=0)
        want = np.einsum("oc,bchw->bohw", w[:, :, 0, 0], x)
        np.testing.assert_allclose(got, want, rtol=1e-12, atol=0)

    def test_argument_validation(self):
        x = np.zeros((1, 2, 4, 4))
        w = np.zeros((3, 2, 3, 3))
        bias = np.zeros(3)
        with pytest.raises(ContractError):
            kernels.conv2d_forward(x[0], w, bias)
        with pytest.raises(ContractError):
            kernels.conv2d_forward(x, w[:, :1], bias)
        with pytest.raises(ContractError):
            kernels.conv2d_forward(x, w, bias[:2])
        with pytest.raises(ContractError):
            kernels.conv2d_forward(x, w, bias, stride=0)
        with pytest.raises(ContractError):
            kernels.conv2d_forward(x, w, bias, pad=-1)

    def test_kernel_too_large_rejected(self):
        x = np.zeros((1, 1, 2, 2))
        w = np.zeros((1, 1, 5, 5))
        with pytest.raises(ContractError):
            kernels.conv2d_forward(x, w, np.zeros(1), stride=1, pad=0)


class TestConvGradients:
    """Backward kernels against central finite differences of the forward map."""

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
    def test_input_grad(self, stride, pad):
        rng = RngStream(13, 0)
        x = rng.normals((2, 2, 5, 5))
        w = rng.normals((3, 2, 3, 3))
        bias = rng.normals((3,))
        gout = rng.normals(kernels.conv2d_forward(x, w, bias, stride=stride, pad=pad).shape)
        gx = kernels.conv2d_input_grad(gout, w, x.shape, stride=stride, pad=pad)
        h = 1e-6
        probe = RngStream(13, 1)
        for _ in range(20):
            idx = tuple(int(probe.integers(1, hi)[0]) for hi in x.shape)
            xp, xm = x.copy(), x.copy()
            xp[idx] += h
            xm[idx] -= h
            fp = np.sum(gout * kernels.conv2d_forward(xp, w, bias, stride=stride, pad=pad))
            fm = np.sum(gout * kernels.conv2d_forward(xm, w, bias, stride=stride, pad=pad))
            fd = (fp - fm) / (2 * h)
            assert abs(gx[idx] - fd) < 1e-5 * max(1.0, abs(fd))

    @pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1)])
    def test_weight_grad(self, stride, pad):
        rng = RngStream(14, 0)
        x = rng.normals((2, 2, 5, 5))
        w = rng.normals((3, 2, 3, 3))
        bias = rng.normals((3,))
        gout = rng.normals(kernels.conv2d_forward(x, w, bias, stride=stride, pad=pad).shape)
        gw, gb = kernels.conv2d_weight_grad(gout, x, w.shape, stride=stride, pad=pad)
        np.testing.assert_allclose(gb, gout.sum(axis=(0, 2, 3)), rtol=1e-12, atol=0)
        h = 1e-6
        probe = RngStream(14, 1)
        for _ in range(20):
            idx = tuple(int(probe.integers(1, hi)[0]) for hi in w.shape)
            wp, wm = w.copy(), w.copy()
            wp[idx] += h
            wm[idx] -= h
            fp = np.sum(gout * kernels.conv2d_forward(x, wp, bias, stride=stride, pad=pad))
            fm = np.sum(gout * kernels.conv2d_forward(x, wm, bias, stride=stride, pad=pad))
            fd = (fp - fm) / (2 * h)
            assert abs(gw[idx] - fd) < 1e-5 * max(1.0, abs(fd))

    def test_input_grad_of_sum_counts_taps(self):
        """With all-ones upstream grad and all-ones weight, each input pixel's
        grad equals the number of output windows that cover it."""
        x = np.zeros((1, 1, 4, 4))
        w = np.ones((1, 1, 3, 3))
        gout = np.ones((1, 1, 2, 2))
        gx = kernels.conv2d_input_grad(gout, w, x.shape, stride=1, pad=0)
        want = np.array([[1, 2, 2, 1], [2, 4, 4, 2], [2, 4, 4, 2], [1, 2, 2, 1]], dtype=float)
        np.testing.assert_array_equal(gx[0, 0], want)


@pytest.mark.skipif(not backend.HAS_NUMBA, reason="compiled backend not installed")
class TestBackendParity:
    def _data(self):
        rng = RngStream(15, 0)
        x = rng.normals((2, 3, 8, 8))
        w = rng.normals((4, 3, 3, 3))
        bias = rng.normals((4,))
        return x, w, bias

    def test_forward_bitwise(self):
        x, w, bias = self._data()
        backend.set_backend("numpy")
        a = kernels.conv2d_forward(x, w, bias, stride=1, pad=1)
        backend.set_backend("numba")
        b = kernels.conv2d_forward(x, w, bias, stride=1, pad=1)
        np.testing.assert_array_equal(a, b)

    def test_input_grad_bitwise(self):
        x, w, bias = self._data()
        gout = RngStream(15, 1).normals((2, 4, 8, 8))
        backend.set_backend("numpy")
        a = kernels.conv2d_input_grad(gout, w, x.shape, stride=1, pad=1)
        backend.set_backend("numba")
        b = kernels.conv2d_input_grad(gout, w, x.shape, stride=1, pad=1)
        np.testing.assert_array_equal(a, b)

    def test_weight_grad_close(self):
        # the numpy path reduces with tensordot, so order differs: rtol, not bitwise
        x, w, bias = self._data()
        gout = RngStream(15, 2).normals((2, 4, 8, 8))
        backend.set_backend("numpy")
        aw, ab = kernels.conv2d_weight_grad(gout, x, w.shape, stride=1, pad=1)
        backend.set_backend("numba")
        bw, bb = kernels.conv2d_weight_grad(gout, x, w.shape, stride=1, pad=1)
        np.testing.assert_allclose(aw, bw, rtol=1e-12, atol=1e-12)
        np.testing.assert_array_equal(ab, bb)

    def test_median_bitwise(self):
        img = RngStream(15, 3).normals((16, 16))
        backend.set_backend("numpy")
        a = kernels.median2d(img, 1)
        backend.set_backend("numba")
        b = kernels.median2d(img, 1)
        np.testing.assert_array_equal(a, b)

    def test_affine_path_bitwise(self):
        rng = RngStream(15, 4)
        steps, n = 32, 4
        P = rng.normals((steps,)) * 0.01
        Q = rng.normals((steps,)) * 0.01
        S = rng.uniforms(steps) * 0.1
        noise = rng.normals((steps, n))
        x0 = rng.normals((n,))
        xT = rng.normals((n,))
        snap = np.arange(1, steps + 1)
        backend.set_backend("numpy")
        a = kernels.affine_euler_path(x0, xT, P, Q, S, noise, snap)
        backend.set_backend("numba")
        b = kernels.affine_euler_path(x0, xT, P, Q, S, noise, snap)
        np.testing.assert_array_equal(a, b)


class TestAffineEulerPath:
    def test_matches_python_recursion(self):
        rng = RngStream(16, 0)
        steps, n = 12, 3
        P = rng.normals((steps,)) * 0.1
        Q = rng.normals((steps,)) * 0.1
        S = rng.uniforms(steps)
        noise = rng.normals((steps, n))
        x0 = rng.normals((n,))
        xT = rng.normals((n,))
        got = kernels.affine_euler_path(x0, xT, P, Q, S, noise, np.arange(1, steps + 1))
        x = x0.copy()
        for k in range(steps):
            x = x + P[k] * x + Q[k] * xT + S[k] * noise[k]
            np.testing.assert_array_equal(got[k], x)

    def test_snap_after_selects_rows(self):
        rng = RngStream(16, 1)
        steps, n = 10, 2
        P = rng.normals((steps,)) * 0.1
        Q = rng.normals((steps,)) * 0.1
        S = rng.uniforms(steps)
        noise = rng.normals((steps, n))
        x0 = rng.normals((n,))
        xT = rng.normals((n,))
        full = kernels.affine_euler_path(x0, xT, P, Q, S, noise, np.arange(1, steps + 1))
        snapped = kernels.affine_euler_path(x0, xT, P, Q, S, noise, np.array([3, 7, 10]))
        np.testing.assert_array_equal(snapped, full[[2, 6, 9]])

    def test_noise_free_deterministic_path(self):
        # with S = 0 the recursion is a plain affine map, easy to verify by hand
        P = np.array([0.5])
        Q = np.array([0.25])
        S = np.zeros(1)
        noise = np.zeros((1, 2))
        got = kernels.affine_euler_path(
            np.array([1.0, 2.0]), np.array([4.0, 8.0]), P, Q, S, noise, np.array([1])
        )
        np.testing.assert_array_equal(got[0], np.array([2.5, 5.0]))

    def test_snap_bounds_validated(self):
        z = np.zeros(2)
        zc = np.zeros(5)
        noise = np.zeros((5, 2))
        with pytest.raises(ContractError):
            kernels.affine_euler_path(z, z, zc, zc, zc, noise, np.array([0]))
        with pytest.raises(ContractError):
            kernels.affine_euler_path(z, z, zc, zc, zc, noise, np.array([6]))
        with pytest.raises(ContractError):
            kernels.affine_euler_path(z, z, zc, zc, zc, noise, np.array([3, 3]))

    def test_shape_mismatch_rejected(self):
        noise = np.zeros((5, 2))
        with pytest.raises(ContractError):
            kernels.affine_euler_path(np.zeros(3), np.zeros(2), np.zeros(5), np.zeros(5),
                                      np.zeros(5), noise, np.array([1]))
        with pytest.raises(ContractError):
            kernels.affine_euler_path(np.zeros(2), np.zeros(2), np.zeros(4), np.zeros(5),
                                      np.zeros(5), noise, np.array([1]))


class TestMedian2d:
    @pytest.mark.parametrize("radius", [1, 2])
    def test_matches_reference(self, radius):
        img = RngStream(17, 0).normals((12, 12))
        got = kernels.median2d(img, radius)
        np.testing.assert_array_equal(got, median2d_reference(img, radius))

    def test_constant_image_fixed_point(self):
        img = np.full((8, 8), 0.37)
        np.testing.assert_array_equal(kernels.median2d(img, 1), img)

    def test_kills_isolated_speckle(self):
        img = np.zeros((9, 9))
        img[4, 4] = 100.0
        assert np.all(kernels.median2d(img, 1) == 0.0)

    def test_validation(self):
        with pytest.raises(ContractError):
            kernels.median2d(np.zeros((4, 4, 1)), 1)
        with pytest.raises(ContractError):
            kernels.median2d(np.zeros((4, 4)), 0)
        with pytest.raises(ContractError):
            kernels.median2d(np.zeros((2, 2)), 2)
