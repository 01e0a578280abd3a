"""Stationary Gaussian random fields by circulant embedding.

The squared-exponential covariance is laid out on a periodic box that is larger
than the grid by several lengthscales. Its FFT gives the spectral weights of
the random Fourier modes. The grid is cropped out of the periodic sample.
"""
from __future__ import annotations

import numpy as np
from scipy import fft as sfft

from .encode import ChannelTensor
from .grid import GridSpec

PAD_LENGTHSCALES = 6.0


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def _embedding(n: int, h: float, lengthscale: float, d: int):
    m = sfft.next_fast_len(n + int(np.ceil(PAD_LENGTHSCALES * lengthscale / h)) + 1)
    k = np.arange(m)
    lag = np.minimum(k, m - k) * h
    r2 = sum(np.meshgrid(*([lag**2] * d), indexing="ij"))
    cov = np.exp(-0.5 * r2 / lengthscale**2)
    lam = np.real(sfft.fftn(cov))
    return m, np.sqrt(np.clip(lam, 0.0, None) / m**d)


def sample_gp_field(grid: GridSpec, lengthscale: float, variance: float = 1.0, seed=0) -> ChannelTensor:
    """Zero-mean field with covariance ``variance * exp(-|x - y|^2 / (2 lengthscale^2))``."""
    if not lengthscale > 0:
        raise ValueError(f"lengthscale must be positive, got {lengthscale}")
    if variance < 0:
        raise ValueError(f"variance must be non-negative, got {variance}")
    rng = _rng(seed)
    m, amp = _embedding(grid.n, grid.h, lengthscale, grid.d)
    z = rng.standard_normal((m,) * grid.d) + 1j * rng.standard_normal((m,) * grid.d)
    field = np.real(sfft.fftn(amp * z))
    crop = field[(slice(0, grid.n),) * grid.d]
    return ChannelTensor(grid, np.sqrt(variance) * crop)


def sample_periodic_gp(m: int, lengthscale: float, seed=0) -> np.ndarray:
    """Unit-variance samples at ``m`` equispaced angles, periodic kernel ``exp(-2 sin^2(dt/2) / l^2)``."""
    rng = _rng(seed)
    theta = 2 * np.pi * np.arange(m) / m
    cov = np.exp(-2.0 * np.sin(theta / 2) ** 2 / lengthscale**2)
    lam = np.clip(np.real(np.fft.fft(cov)), 0.0, None)
    z = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    return np.real(np.fft.fft(np.sqrt(lam / m) * z))


class GridFunction:
    """Callable multilinear interpolant of values sampled on a grid (exact at grid points)."""

    def __init__(self, grid: GridSpec, values):
        self.grid = grid
        self.values = np.asarray(values, dtype=np.float64)
        if self.values.shape != grid.shape:
            raise ValueError(f"values shape {self.values.shape} does not match grid {grid.shape}")

    def __call__(self, points) -> np.ndarray:
        return self.grid.interpolation_matrix(points) @ self.values.ravel()
