"""Seeded random generation and small statistics helpers.

All randomness in the package goes through :class:`SeededRng`, a counter-based
SplitMix64 generator.  Output ``i`` of a stream seeded with ``s`` is
``mix64(s + (i + 1) * GAMMA)``, so sequences are identical across platforms and
can be produced in vectorized blocks.  Tensors are plain ``float64`` numpy arrays.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgument

GAMMA = 0x9E3779B97F4A7C15
_MASK64 = (1 << 64) - 1
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def _mix64(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def mix64(value: int) -> int:
    """SplitMix64 finalizer on a single integer."""
    return int(_mix64(np.array([value & _MASK64], dtype=np.uint64))[0])


def derive_seed(parent: int, stream: int) -> int:
    """Child seed for ``stream`` of ``parent``: ``mix64(parent ^ mix64(stream + GAMMA))``."""
    return mix64((parent & _MASK64) ^ mix64((stream + GAMMA) & _MASK64))


class SeededRng:
    """SplitMix64 stream.  Single owner; derive children with :func:`derive_seed`."""

    def __init__(self, seed: int = 0):
        if seed < 0:
            raise InvalidArgument(f"seed must be non-negative, got {seed}")
        self.seed = seed & _MASK64
        self.counter = 0

    def spawn(self, stream: int) -> "SeededRng":
        return SeededRng(derive_seed(self.seed, stream))

    def next_uint64(self, n: int) -> np.ndarray:
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        return _mix64(np.uint64(self.seed) + idx * np.uint64(GAMMA))

    def uniform(self, n: int) -> np.ndarray:
        """``n`` doubles in [0, 1) from the top 53 bits."""
        return (self.next_uint64(n) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def integers(self, n: int, high: int) -> np.ndarray:
        if high < 1:
            raise InvalidArgument(f"high must be >= 1, got {high}")
        return np.minimum((self.uniform(n) * high).astype(np.int64), high - 1)

    def normal(self, n: int) -> np.ndarray:
        """Standard normals by Box-Muller, both branches used."""
        m = (n + 1) // 2
        u = self.uniform(2 * m)
        r = np.sqrt(-2.0 * np.log1p(-u[:m]))
        theta = 2.0 * np.pi * u[m:]
        return np.concatenate([r * np.cos(theta), r * np.sin(theta)])[:n]


def sample_rademacher(rng: SeededRng, n: int) -> np.ndarray:
    if n < 1:
        raise InvalidArgument(f"rademacher sample size must be >= 1, got {n}")
    bits = (rng.next_uint64(n) >> np.uint64(63)).astype(np.float64)
    return 1.0 - 2.0 * bits


def sample_gaussian(rng: SeededRng, n: int, sigma: float = 1.0) -> np.ndarray:
    if sigma < 0:
        raise InvalidArgument(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.zeros(n)
    return sigma * rng.normal(n)


def mean_std(x) -> tuple[float, float]:
    """Arithmetic mean and population standard deviation."""
    x = np.asarray(x, dtype=np.float64)
    if x.size == 0:
        raise InvalidArgument("mean_std of an empty tensor")
    mean = float(x.mean())
    return mean, float(np.sqrt(np.mean((x - mean) ** 2)))
