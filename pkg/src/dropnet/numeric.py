"""Dense float64 arithmetic and the seeded random source.

Tensors are plain ``numpy.ndarray`` objects of dtype float64 in C (row-major)
order. ``RandomSource`` wraps numpy's PCG64 bit generator, whose output stream
is documented to be bit-exact across platforms for a given seed.
"""
from __future__ import annotations

import numpy as np


class ShapeError(ValueError):
    """Raised when tensor shapes are incompatible."""


class NumericError(ArithmeticError):
    """Raised when a computation produces or receives non-finite values."""


def as_tensor(x, copy: bool = False) -> np.ndarray:
    if copy:
        return np.array(x, dtype=np.float64, order="C")
    return np.ascontiguousarray(x, dtype=np.float64)


def check_finite(x: np.ndarray, what: str = "tensor") -> np.ndarray:
    if not np.all(np.isfinite(x)):
        raise NumericError(f"{what} contains NaN or Inf")
    return x


def matmul(A, B) -> np.ndarray:
    """Matrix product with a fixed accumulation order.

    Every output entry is accumulated as ``sum_k A[i, k] * B[k, j]`` in
    increasing ``k``. Because the order depends only on ``k``, the identity
    ``matmul(A, B).T == matmul(B.T, A.T)`` holds bit for bit, which BLAS does
    not promise. This is the reference kernel; the training hot path uses
    ``numpy.matmul``.
    """
    A = as_tensor(A)
    B = as_tensor(B)
    if A.ndim != 2 or B.ndim != 2:
        raise ShapeError(f"matmul expects 2-D operands, got {A.shape} and {B.shape}")
    m, k = A.shape
    k2, n = B.shape
    if k != k2:
        raise ShapeError(f"inner dimensions disagree: {A.shape} vs {B.shape}")
    out = np.zeros((m, n))
    for t in range(k):
        out += np.multiply.outer(A[:, t], B[t, :])
    return out


def row_sq_norms(W) -> np.ndarray:
    """Squared L2 length of each row of a 2-D array."""
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2:
        raise ShapeError(f"row_sq_norms expects a 2-D array, got shape {W.shape}")
    return np.einsum("ij,ij->i", W, W)


class RandomSource:
    """Single-owner deterministic random stream (PCG64).

    The full generator state can be exported with :meth:`get_state` and
    restored with :meth:`set_state`, which is what checkpoints store.
    """

    algorithm = "PCG64"

    def __init__(self, seed: int = 0):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._gen = np.random.Generator(np.random.PCG64(seed))

    @property
    def generator(self) -> np.random.Generator:
        return self._gen

    def uniform(self, shape) -> np.ndarray:
        return self._gen.random(shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def get_state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        if state.get("bit_generator") != self.algorithm:
            raise ValueError(f"expected {self.algorithm} state, got {state.get('bit_generator')}")
        self._gen.bit_generator.state = state

    def spawn(self) -> "RandomSource":
        """Independent child stream, derived deterministically from this one."""
        child = RandomSource(int(self._gen.integers(0, 2**63)))
        return child


def gauss_sample(rng: RandomSource, mean: float, sd: float, shape) -> np.ndarray:
    if sd < 0:
        raise ValueError(f"standard deviation must be non-negative, got {sd}")
    z = rng.generator.standard_normal(shape)
    return mean + sd * z


def bernoulli_mask(rng: RandomSource, retain_prob: float, shape) -> np.ndarray:
    """0/1 float array, each entry 1 independently with ``retain_prob``."""
    if not 0.0 <= retain_prob <= 1.0:
        raise ValueError(f"retain probability must lie in [0, 1], got {retain_prob}")
    # uniform draws live in [0, 1), so p=1 gives all ones and p=0 all zeros
    return (rng.uniform(shape) < retain_prob).astype(np.float64)
