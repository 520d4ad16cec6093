"""Dense float64 tensor helpers, deterministic RNG streams, and initializers.

Tensors are plain ``numpy.ndarray`` objects with dtype float64 and row-major
layout. Everything that draws random numbers goes through :class:`RngStream`
so that runs are reproducible from a single integer seed.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ShapeMismatchError",
    "RngStream",
    "matmul",
    "glorot_uniform",
    "gaussian_sample",
    "as_tensor",
]


class ShapeMismatchError(ValueError):
    """Raised when operand shapes are incompatible."""


def as_tensor(data) -> np.ndarray:
    """Coerce to a C-contiguous float64 array."""
    return np.ascontiguousarray(data, dtype=np.float64)


def _mix_stream_id(stream_id: int, *parts) -> int:
    """Stable 64-bit derivation of a child stream id from (stream_id, parts).

    Parts may be ints or strings; the digest is platform independent.
    """
    h = hashlib.sha256()
    h.update(int(stream_id).to_bytes(8, "little", signed=False))
    for part in parts:
        if isinstance(part, str):
            h.update(b"s" + part.encode("utf-8") + b"\x00")
        else:
            h.update(b"i" + int(part).to_bytes(8, "little", signed=True))
    return int.from_bytes(h.digest()[:8], "little")


@dataclass
class RngStream:
    """A named, reproducible random stream.

    Identical ``(seed, stream_id)`` always produce the identical value
    sequence; ``derive`` builds statistically independent substreams (one per
    sample, per fold, per augmentation, ...) without coordination.
    """

    seed: int
    stream_id: int = 0
    _gen: np.random.Generator | None = field(default=None, repr=False, compare=False)

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            # Philox is counter based: two key words give disjoint streams
            # for every distinct (seed, stream_id) pair.
            key = (int(self.seed) & 0xFFFFFFFFFFFFFFFF, int(self.stream_id) & 0xFFFFFFFFFFFFFFFF)
            self._gen = np.random.Generator(np.random.Philox(key=key))
        return self._gen

    def derive(self, *parts) -> "RngStream":
        """Child stream keyed by ints/strings, independent of the parent."""
        return RngStream(self.seed, _mix_stream_id(self.stream_id, *parts))

    # -- draws ------------------------------------------------------------

    def uniform(self, low: float, high: float, shape=()) -> np.ndarray:
        return self.generator.uniform(low, high, size=shape).astype(np.float64, copy=False)

    def normal(self, mu: float, sigma: float, shape=()) -> np.ndarray:
        return self.generator.normal(mu, sigma, size=shape).astype(np.float64, copy=False)

    def integers(self, low: int, high: int, shape=None):
        return self.generator.integers(low, high, size=shape)

    def random(self, shape=()) -> np.ndarray:
        return self.generator.random(size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self.generator.permutation(n)

    def choice_without_replacement(self, n: int, k: int) -> np.ndarray:
        return self.generator.choice(n, size=k, replace=False)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product with explicit shape checking.

    The reduction order is fixed by the build (single BLAS configuration), so
    repeated runs produce bit-identical results.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatchError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul inner extents differ: {a.shape} vs {b.shape}")
    return a @ b


def glorot_uniform(rng: RngStream, fan_in: int, fan_out: int, shape) -> np.ndarray:
    """Uniform samples on [-L, L] with L = sqrt(6 / (fan_in + fan_out))."""
    if fan_in < 1 or fan_out < 1:
        raise ValueError(f"fan_in and fan_out must be >= 1, got ({fan_in}, {fan_out})")
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape)


def gaussian_sample(rng: RngStream, mu: float, sigma: float, shape) -> np.ndarray:
    """I.i.d. normal draws; ``sigma == 0`` yields a constant tensor."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return np.full(shape, float(mu), dtype=np.float64)
    return rng.normal(mu, sigma, shape)
