"""Deterministic numerical substrate: seeded RNG, 2D FFT, top singular triple.

Arrays are plain float64/complex128 ndarrays in C (row-major) order; the
row-major flattening is the canonical vectorization convention used by the
convolution linearization. The FFT is the unnormalized forward DFT (numpy
convention), so ``ifft2(fft2(x)) == x`` and Parseval reads
``norm(fft2(x))**2 == n*m * norm(x)**2``.
"""

from __future__ import annotations

import numpy as np


class Rng:
    """Seeded random stream (PCG64). Identical seeds give identical draw
    sequences; independent streams come from distinct seeds or ``spawn``."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def gaussian(self, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
        if std < 0:
            raise ValueError(f"std must be >= 0, got {std}")
        return self._gen.normal(loc=mean, scale=std, size=shape)

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def integers(self, low: int, high: int, size=None):
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def choice(self, n: int, size: int, replace: bool = False) -> np.ndarray:
        return self._gen.choice(n, size=size, replace=replace)

    def unit_vector(self, dim: int) -> np.ndarray:
        """Uniform point on the unit sphere (gaussian direction, normalized)."""
        v = self.gaussian((dim,))
        nrm = np.linalg.norm(v)
        while nrm == 0.0:  # measure zero, but keep the contract total
            v = self.gaussian((dim,))
            nrm = np.linalg.norm(v)
        return v / nrm

    def spawn(self, key: int) -> "Rng":
        """Independent child stream, deterministic in (seed, key)."""
        child = Rng.__new__(Rng)
        child.seed = self.seed
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=(int(key),))
        child._gen = np.random.Generator(np.random.PCG64(seq))
        return child

    def state(self) -> dict:
        return self._gen.bit_generator.state

    def set_state(self, state: dict) -> None:
        self._gen.bit_generator.state = state


def gaussian(rng: Rng, shape, mean: float = 0.0, std: float = 1.0) -> np.ndarray:
    """i.i.d. normal draws from a seeded stream."""
    return rng.gaussian(shape, mean, std)


def fft2(grid: np.ndarray) -> np.ndarray:
    """Unnormalized forward 2D DFT of a 2D array (any sizes >= 1)."""
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.size == 0:
        raise ValueError(f"fft2 expects a non-empty 2D array, got shape {grid.shape}")
    return np.fft.fft2(grid)


def ifft2(grid: np.ndarray) -> np.ndarray:
    """Inverse of ``fft2`` (normalized by 1/(n*m))."""
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.size == 0:
        raise ValueError(f"ifft2 expects a non-empty 2D array, got shape {grid.shape}")
    return np.fft.ifft2(grid)


def svd_top(M: np.ndarray) -> tuple[float, np.ndarray, np.ndarray]:
    """Top singular triple (sigma, u, v) of a real matrix, by dense SVD.

    Satisfies M @ v ~= sigma * u with unit u, v. Intended for exact
    small-matrix work (oracles, per-epoch logging), not for huge operators.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] < 1 or M.shape[1] < 1:
        raise ValueError(f"svd_top expects an m x n matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValueError("svd_top: matrix has non-finite entries")
    U, s, Vh = np.linalg.svd(M, full_matrices=False)
    return float(s[0]), U[:, 0].copy(), Vh[0, :].copy()
