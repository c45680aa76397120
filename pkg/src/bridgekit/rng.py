"""Deterministic random streams.

Streams are numpy Philox generators keyed by (seed, stream_id). Philox is
counter based, so the same key reproduces the same draw sequence on any
platform and numpy build, which is what makes run manifests and training
logs replayable. Normal deviates come from our own Box-Muller transform on
the generator's uniforms rather than numpy's ziggurat, pinning the exact
sequence independently of numpy's implementation choices.

Child streams are derived, not split: derive(index) mixes the parent
stream id and the index through splitmix64, giving a stable 64-bit id per
(parent, index) pair without consuming parent state.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DomainError

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_TWO_PI = 2.0 * math.pi


def splitmix64(x: int) -> int:
    """One splitmix64 mixing round; maps 64-bit ints to 64-bit ints."""
    x = (x + _GOLDEN) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return (z ^ (z >> 31)) & _MASK64


def _check_u64(name: str, value: int) -> int:
    if not isinstance(value, (int, np.integer)):
        raise DomainError(f"{name} must be an integer, got {type(value).__name__}")
    value = int(value)
    if not 0 <= value <= _MASK64:
        raise DomainError(f"{name} must fit in 64 bits, got {value}")
    return value


class RngStream:
    """Stateful draw sequence for one (seed, stream_id) key."""

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = _check_u64("seed", seed)
        self.stream_id = _check_u64("stream_id", stream_id)
        key = np.array([self.seed, self.stream_id], dtype=np.uint64)
        self._gen = np.random.Generator(np.random.Philox(key=key))

    def derive(self, index: int) -> "RngStream":
        """Fresh stream for a child task; parent state is untouched."""
        index = _check_u64("index", index)
        child = splitmix64(splitmix64(self.stream_id) ^ (index + 1))
        return RngStream(self.seed, child)

    def uniforms(self, n: int) -> np.ndarray:
        """n float64 draws uniform on [0, 1)."""
        if n < 0:
            raise DomainError(f"draw count must be >= 0, got {n}")
        return self._gen.random(n)

    def normals(self, shape) -> np.ndarray:
        """Standard normal draws via Box-Muller on paired uniforms."""
        if isinstance(shape, (int, np.integer)):
            shape = (int(shape),)
        shape = tuple(int(s) for s in shape)
        n = 1
        for s in shape:
            if s < 0:
                raise DomainError(f"shape extents must be >= 0, got {shape}")
            n *= s
        if n == 0:
            return np.empty(shape, dtype=np.float64)
        m = (n + 1) // 2
        u = self._gen.random(2 * m)
        # 1 - u keeps the log argument in (0, 1]; u = 0 would blow up.
        r = np.sqrt(-2.0 * np.log(1.0 - u[:m]))
        theta = _TWO_PI * u[m:]
        z = np.empty(2 * m, dtype=np.float64)
        z[0::2] = r * np.cos(theta)
        z[1::2] = r * np.sin(theta)
        return z[:n].reshape(shape)

    def integers(self, n: int, bound: int) -> np.ndarray:
        """n int64 draws uniform on [0, bound)."""
        if bound <= 0:
            raise DomainError(f"bound must be >= 1, got {bound}")
        u = self.uniforms(n)
        return np.minimum((u * bound).astype(np.int64), bound - 1)
