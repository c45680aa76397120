"""Time each hot kernel on the numba backend against its numpy twin.

Run as a script:  python benchmarks/bench_backends.py [--repeat N]

For every kernel the two backends are checked for agreement first (the
conv weight gradient to rtol 1e-12, everything else for exact equality),
then timed warm. Numba compile time is excluded by a throwaway call.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from bridgekit import kernels
from bridgekit.backend import HAS_NUMBA, active_backend, set_backend
from bridgekit.rng import RngStream


def _time(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        tic = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - tic)
    return best


def _cases():
    rng = RngStream(0, 0)
    steps, paths = 500, 20_000
    path_args = (
        rng.normals(paths),
        rng.normals(paths),
        0.01 * rng.normals(steps),
        0.01 * rng.normals(steps),
        0.05 * np.abs(rng.normals(steps)),
        rng.normals((steps, paths)),
        np.array([steps], dtype=np.int64),
    )
    x = rng.normals((4, 8, 64, 64))
    w = rng.normals((16, 8, 3, 3)) * 0.1
    b = rng.normals(16)
    g = rng.normals((4, 16, 32, 32))
    img = np.abs(rng.normals((256, 256)))
    yield "affine_euler_path", lambda: kernels.affine_euler_path(*path_args), "exact"
    yield "conv2d_forward", lambda: kernels.conv2d_forward(x, w, b, stride=2, pad=1), "exact"
    yield (
        "conv2d_input_grad",
        lambda: kernels.conv2d_input_grad(g, w, x.shape, stride=2, pad=1),
        "exact",
    )
    yield (
        "conv2d_weight_grad",
        lambda: kernels.conv2d_weight_grad(g, x, w.shape, stride=2, pad=1)[0],
        "rtol 1e-12",
    )
    yield "median2d", lambda: kernels.median2d(img, 1), "exact"


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()
    if not HAS_NUMBA:
        print("numba is not importable; nothing to compare")
        return 1

    print(f"{'kernel':22} {'numba':>10} {'numpy':>10} {'speedup':>9}  agreement")
    for name, fn, contract in _cases():
        set_backend("numba")
        fn()  # compile
        got_nb = fn()
        t_nb = _time(fn, args.repeat)
        set_backend("numpy")
        got_np = fn()
        t_np = _time(fn, args.repeat)
        if contract == "exact":
            ok = np.array_equal(got_nb, got_np)
        else:
            ok = np.allclose(got_nb, got_np, rtol=1e-12, atol=0.0)
        status = contract if ok else "MISMATCH"
        print(f"{name:22} {t_nb * 1e3:8.2f}ms {t_np * 1e3:8.2f}ms {t_np / t_nb:8.2f}x  {status}")
    set_backend("auto")
    print(f"active backend restored to {active_backend()}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
