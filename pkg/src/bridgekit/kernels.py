"""Hot numeric kernels, each in a numba build and a pure-numpy twin.

The twins are written to accumulate in the same per-element order as the
numba loops, using only +, -, *, / and sqrt, so both backends produce
equal floats, not merely close ones. Transcendentals and random draws
stay outside the kernels; callers precompute per-step coefficients and
noise arrays in numpy-land and pass them in.

One documented exception: conv2d_weight_grad reduces over (batch, y, x)
with tensordot on the numpy path, whose summation order differs from the
numba scalar loop. Its cross-backend contract is rtol 1e-12, not bitwise.

Kernels operate on pre-padded inputs; dispatchers own the padding so both
backends see identical tap sets.
"""

from __future__ import annotations

import numpy as np

from .backend import HAS_NUMBA, active_backend
from .errors import ContractError

if HAS_NUMBA:
    from numba import njit


def _as_c64(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64))


# --- affine Euler path ------------------------------------------------------
# One Euler-Maruyama step of an SDE whose drift is affine in the state:
#   x <- x + P[k] * x + Q[k] * xT + S[k] * noise[k]
# P, Q, S fold dt, the drift coefficients and g * sqrt(dt) per step.


def _affine_path_np(x0, xT, P, Q, S, noise, snap_after, out):
    x = x0.copy()
    si = 0
    n_snap = snap_after.shape[0]
    for k in range(P.shape[0]):
        x = x + P[k] * x + Q[k] * xT + S[k] * noise[k]
        if si < n_snap and snap_after[si] == k + 1:
            out[si] = x
            si += 1


def _affine_path_loop(x0, xT, P, Q, S, noise, snap_after, out):
    n = x0.shape[0]
    x = x0.copy()
    si = 0
    n_snap = snap_after.shape[0]
    for k in range(P.shape[0]):
        for i in range(n):
            x[i] = x[i] + P[k] * x[i] + Q[k] * xT[i] + S[k] * noise[k, i]
        if si < n_snap and snap_after[si] == k + 1:
            for i in range(n):
                out[si, i] = x[i]
            si += 1


def affine_euler_path(x0, xT, P, Q, S, noise, snap_after) -> np.ndarray:
    """Run the affine Euler recursion, recording the state after the step
    indices listed in snap_after (1-based, sorted ascending).

    Shapes: x0, xT (n,); P, Q, S (steps,); noise (steps, n).
    Returns (len(snap_after), n).
    """
    x0, xT, P, Q, S, noise = map(_as_c64, (x0, xT, P, Q, S, noise))
    snap_after = np.ascontiguousarray(np.asarray(snap_after, dtype=np.int64))
    steps, n = noise.shape
    if x0.shape != (n,) or xT.shape != (n,):
        raise ContractError(f"state shape mismatch: x0 {x0.shape}, xT {xT.shape}, noise {noise.shape}")
    if P.shape != (steps,) or Q.shape != (steps,) or S.shape != (steps,):
        raise ContractError("per-step coefficient arrays must have length equal to noise steps")
    if snap_after.size and (snap_after[0] < 1 or snap_after[-1] > steps
                            or np.any(np.diff(snap_after) <= 0)):
        raise ContractError("snap_after must be sorted, unique, within [1, steps]")
    out = np.empty((snap_after.shape[0], n), dtype=np.float64)
    impl = _affine_path_jit if active_backend() == "numba" else _affine_path_np
    impl(x0, xT, P, Q, S, noise, snap_after, out)
    return out


# --- 2d convolution ---------------------------------------------------------


def _conv2d_forward_np(xp, w, bias, stride, out):
    B, Co, Ho, Wo = out.shape
    Ci, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    out[:] = bias[None, :, None, None]
    for c in range(Ci):
        for ky in range(kh):
            for kx in range(kw):
                out += (
                    w[None, :, c, ky, kx, None, None]
                    * xp[:, None, c,
                         ky : ky + stride * (Ho - 1) + 1 : stride,
                         kx : kx + stride * (Wo - 1) + 1 : stride]
                )


def _conv2d_forward_loop(xp, w, bias, stride, out):
    B, Co, Ho, Wo = out.shape
    Ci, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    for bi in range(B):
        for o in range(Co):
            for y in range(Ho):
                for x in range(Wo):
                    acc = bias[o]
                    for c in range(Ci):
                        for ky in range(kh):
                            for kx in range(kw):
                                acc += w[o, c, ky, kx] * xp[bi, c, y * stride + ky, x * stride + kx]
                    out[bi, o, y, x] = acc


def _conv2d_input_grad_np(g, w, stride, gxp):
    B, Co, Ho, Wo = g.shape
    kh, kw = w.shape[2], w.shape[3]
    for o in range(Co):
        for ky in range(kh):
            for kx in range(kw):
                gxp[:, :,
                    ky : ky + stride * (Ho - 1) + 1 : stride,
                    kx : kx + stride * (Wo - 1) + 1 : stride] += (
                    w[o, :, ky, kx][None, :, None, None] * g[:, o, None, :, :]
                )


def _conv2d_input_grad_loop(g, w, stride, gxp):
    B, Co, Ho, Wo = g.shape
    Ci, kh, kw = w.shape[1], w.shape[2], w.shape[3]
    for bi in range(B):
        for o in range(Co):
            for ky in range(kh):
                for kx in range(kw):
                    for c in range(Ci):
                        for y in range(Ho):
                            for x in range(Wo):
                                gxp[bi, c, y * stride + ky, x * stride + kx] += (
                                    w[o, c, ky, kx] * g[bi, o, y, x]
                                )


def _conv2d_weight_grad_np(g, xp, stride, gw):
    Co, Ci, kh, kw = gw.shape
    Ho, Wo = g.shape[2], g.shape[3]
    for ky in range(kh):
        for kx in range(kw):
            sl = xp[:, :,
                    ky : ky + stride * (Ho - 1) + 1 : stride,
                    kx : kx + stride * (Wo - 1) + 1 : stride]
            gw[:, :, ky, kx] = np.tensordot(g, sl, axes=([0, 2, 3], [0, 2, 3]))


def _conv2d_weight_grad_loop(g, xp, stride, gw):
    Co, Ci, kh, kw = gw.shape
    B, Ho, Wo = g.shape[0], g.shape[2], g.shape[3]
    for o in range(Co):
        for c in range(Ci):
            for ky in range(kh):
                for kx in range(kw):
                    acc = 0.0
                    for bi in range(B):
                        for y in range(Ho):
                            for x in range(Wo):
                                acc += g[bi, o, y, x] * xp[bi, c, y * stride + ky, x * stride + kx]
                    gw[o, c, ky, kx] = acc


def _check_conv_args(x, w, bias, stride, pad):
    if x.ndim != 4 or w.ndim != 4:
        raise ContractError(f"conv2d expects 4d input and weight, got {x.shape} and {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ContractError(f"channel mismatch: input {x.shape[1]}, weight {w.shape[1]}")
    if bias.shape != (w.shape[0],):
        raise ContractError(f"bias shape {bias.shape} does not match {w.shape[0]} filters")
    if stride < 1 or pad < 0:
        raise ContractError(f"stride must be >= 1 and pad >= 0, got {stride}, {pad}")


def conv2d_forward(x, w, bias, stride: int = 1, pad: int = 1) -> np.ndarray:
    """Zero-padded cross-correlation of x (B,Ci,H,W) with w (Co,Ci,kh,kw)."""
    x, w, bias = _as_c64(x), _as_c64(w), _as_c64(bias)
    _check_conv_args(x, w, bias, stride, pad)
    B, Ci, H, W = x.shape
    Co, _, kh, kw = w.shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    if Ho < 1 or Wo < 1:
        raise ContractError(f"kernel {kh}x{kw} does not fit input {H}x{W} with pad {pad}")
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    out = np.empty((B, Co, Ho, Wo), dtype=np.float64)
    impl = _conv2d_forward_jit if active_backend() == "numba" else _conv2d_forward_np
    impl(xp, w, bias, stride, out)
    return out


def conv2d_input_grad(g, w, x_shape, stride: int = 1, pad: int = 1) -> np.ndarray:
    """Gradient of conv2d_forward w.r.t. its input, given output grad g."""
    g, w = _as_c64(g), _as_c64(w)
    B, Ci, H, W = x_shape
    gxp = np.zeros((B, Ci, H + 2 * pad, W + 2 * pad), dtype=np.float64)
    impl = _conv2d_input_grad_jit if active_backend() == "numba" else _conv2d_input_grad_np
    impl(g, w, stride, gxp)
    if pad:
        return np.ascontiguousarray(gxp[:, :, pad:-pad, pad:-pad])
    return gxp


def conv2d_weight_grad(g, x, w_shape, stride: int = 1, pad: int = 1):
    """Gradients of conv2d_forward w.r.t. weight and bias.

    The bias gradient is a plain shared sum; the weight gradient is the
    one kernel whose numpy path reduces in a different order (tensordot),
    so backends agree to rtol 1e-12 rather than bitwise.
    """
    g, x = _as_c64(g), _as_c64(x)
    pad_ = ((0, 0), (0, 0), (pad, pad), (pad, pad))
    xp = np.pad(x, pad_)
    gw = np.empty(w_shape, dtype=np.float64)
    impl = _conv2d_weight_grad_jit if active_backend() == "numba" else _conv2d_weight_grad_np
    impl(g, xp, stride, gw)
    gb = g.sum(axis=(0, 2, 3))
    return gw, gb


# --- median filter ----------------------------------------------------------


def _median2d_np(xp, radius, out):
    k = 2 * radius + 1
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k))
    out[:] = np.median(win, axis=(2, 3))


def _median2d_loop(xp, radius, out):
    H, W = out.shape
    k = 2 * radius + 1
    m = k * k
    buf = np.empty(m, dtype=np.float64)
    for y in range(H):
        for x in range(W):
            idx = 0
            for dy in range(k):
                for dx in range(k):
                    buf[idx] = xp[y + dy, x + dx]
                    idx += 1
            # insertion sort; m is tiny (9 for radius 1)
            for i in range(1, m):
                v = buf[i]
                j = i - 1
                while j >= 0 and buf[j] > v:
                    buf[j + 1] = buf[j]
                    j -= 1
                buf[j + 1] = v
            out[y, x] = buf[m // 2]


def median2d(x, radius: int = 1) -> np.ndarray:
    """Median filter with a (2r+1)^2 window and reflected borders."""
    x = _as_c64(x)
    if x.ndim != 2:
        raise ContractError(f"median2d expects a 2d array, got shape {x.shape}")
    if radius < 1:
        raise ContractError(f"radius must be >= 1, got {radius}")
    if min(x.shape) <= radius:
        raise ContractError(f"array {x.shape} too small for radius {radius}")
    xp = np.pad(x, radius, mode="reflect")
    out = np.empty_like(x)
    impl = _median2d_jit if active_backend() == "numba" else _median2d_np
    impl(xp, radius, out)
    return out


if HAS_NUMBA:
    _affine_path_jit = njit(cache=True)(_affine_path_loop)
    _conv2d_forward_jit = njit(cache=True)(_conv2d_forward_loop)
    _conv2d_input_grad_jit = njit(cache=True)(_conv2d_input_grad_loop)
    _conv2d_weight_grad_jit = njit(cache=True)(_conv2d_weight_grad_loop)
    _median2d_jit = njit(cache=True)(_median2d_loop)
else:  # pragma: no cover
    _affine_path_jit = None
    _conv2d_forward_jit = None
    _conv2d_input_grad_jit = None
    _conv2d_weight_grad_jit = None
    _median2d_jit = None
