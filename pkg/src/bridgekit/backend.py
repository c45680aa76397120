"""Kernel backend selection.

Hot kernels exist twice: a numba @njit build and a pure-numpy twin that
accumulates in the same per-element order. BRIDGEKIT_BACKEND picks the
path at import time ("auto", "numba", "numpy"); set_backend() switches at
runtime, which the parity tests and the benchmark rely on. Both paths
produce equal values; see kernels.py for the one documented exception.

BRIDGEKIT_THREADS caps numba's thread pool. Kernels here are serial, so
this only matters for embedding code that also uses numba.
"""

from __future__ import annotations

import os

from .errors import ConfigError

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via BRIDGEKIT_BACKEND=numpy
    numba = None
    HAS_NUMBA = False

_VALID = ("auto", "numba", "numpy")


def _resolve(choice: str) -> str:
    if choice not in _VALID:
        raise ConfigError(f"BRIDGEKIT_BACKEND must be one of {_VALID}, got {choice!r}")
    if choice == "auto":
        return "numba" if HAS_NUMBA else "numpy"
    if choice == "numba" and not HAS_NUMBA:
        raise ConfigError("BRIDGEKIT_BACKEND=numba but numba is not importable")
    return choice


_active = _resolve(os.environ.get("BRIDGEKIT_BACKEND", "auto"))

if HAS_NUMBA:
    _threads = os.environ.get("BRIDGEKIT_THREADS")
    if _threads is not None:
        try:
            _cap = int(_threads)
        except ValueError as exc:
            raise ConfigError(f"BRIDGEKIT_THREADS must be an integer, got {_threads!r}") from exc
        if _cap < 1:
            raise ConfigError(f"BRIDGEKIT_THREADS must be >= 1, got {_cap}")
        numba.set_num_threads(min(_cap, numba.config.NUMBA_NUM_THREADS))


def active_backend() -> str:
    """Return the backend kernels will dispatch to: "numba" or "numpy"."""
    return _active


def set_backend(choice: str) -> str:
    """Switch the kernel backend at runtime; returns the resolved name."""
    global _active
    _active = _resolve(choice)
    return _active
