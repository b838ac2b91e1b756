"""Dense float64 tensors and a seeded random source.

Every value flowing through the graph is a C-contiguous float64 numpy array.
Binary elementwise operations require identical shapes; there is no implicit
broadcasting. All arithmetic is 64-bit: the 32-bit figure quoted for model
memory applies to the storage accounting formula only, never to computation.
"""

from __future__ import annotations

import hashlib

import numpy as np

from .errors import ArgumentError, ShapeError

# Alias used in signatures throughout the package.
Tensor = np.ndarray


def tensor(values) -> np.ndarray:
    """Build a float64 row-major tensor from nested sequences or an array."""
    return np.ascontiguousarray(np.asarray(values, dtype=np.float64))


def zeros(shape) -> np.ndarray:
    return np.zeros(shape, dtype=np.float64)


def _check_same_shape(op: str, a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} differ")


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of a 2-D [m,k] by a 2-D [k,n] tensor."""
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul: expected 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: inner dimensions disagree: {a.shape} x {b.shape}")
    return a @ b


def add(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape("add", a, b)
    return a + b


def sub(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape("sub", a, b)
    return a - b


def mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    _check_same_shape("mul", a, b)
    return a * b


def max_with_scalar(lo: float, a: np.ndarray) -> np.ndarray:
    """Elementwise max(lo, a); with lo=0 this is the ReLU nonlinearity."""
    return np.maximum(a, lo)


def exp(a: np.ndarray) -> np.ndarray:
    return np.exp(a)


def tanh(a: np.ndarray) -> np.ndarray:
    return np.tanh(a)


def sigmoid(a: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function, finite for any finite input."""
    out = np.empty_like(a, dtype=np.float64)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


class Rng:
    """Deterministic random source.

    Backed by numpy's Philox counter-based bit generator, whose stream for a
    given seed is fixed across platforms and numpy releases. A single Rng is
    owned by one consumer at a time; share seeds, not instances.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.Philox(self.seed))

    def uniform(self, shape, lo: float = 0.0, hi: float = 1.0) -> np.ndarray:
        if not lo < hi:
            raise ArgumentError(f"uniform: need lo < hi, got lo={lo}, hi={hi}")
        return self._gen.uniform(lo, hi, size=shape).astype(np.float64, copy=False)

    def normal(self, shape, sigma: float = 1.0) -> np.ndarray:
        if sigma < 0:
            raise ArgumentError(f"normal: sigma must be >= 0, got {sigma}")
        return sigma * self._gen.standard_normal(size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def integer(self, n: int) -> int:
        """One draw from {0, ..., n-1}."""
        return int(self._gen.integers(0, n))


def derive_seed(base_seed: int, *parts) -> int:
    """Stable 64-bit sub-seed from a base seed and context labels.

    SHA-256 over the canonical string "base:part:part:..."; first 8 digest
    bytes, little-endian. Frozen so that experiment tables are reproducible
    from one base seed on any platform.
    """
    text = ":".join([str(int(base_seed))] + [str(p) for p in parts])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")
