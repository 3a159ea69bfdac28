"""Periodic-torus grids, real<->spectral transforms, and spectral calculus.

Conventions used throughout the package:

* the domain is [0, 2*pi)^dim, so wavenumbers are integers;
* physical fields are real float64 arrays; a rank-r field has shape
  (dim,)*r + grid.shape with component axes leading;
* spectral fields are complex128 rfftn coefficients with norm="forward",
  so the k=0 coefficient equals the spatial mean;
* the gradient prepends its component axis: grad(f)[i, ...] = d_i f.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.fft as _fft

TWO_PI = 2.0 * np.pi

_workers = 1


def set_fft_workers(n: int) -> None:
    """Set the scipy.fft worker count (results are bitwise independent of it)."""
    global _workers
    _workers = max(1, int(n))


def get_fft_workers() -> int:
    return _workers


@dataclass
class Grid:
    """Uniform periodic grid on [0, 2*pi)^dim with n points per axis."""

    dim: int
    n: int
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ValueError(f"dim must be 2 or 3, got {self.dim}")
        if self.n < 8 or self.n % 2 != 0:
            raise ValueError(f"n must be even and >= 8, got {self.n}")
        if not 0.0 < self.dealias_fraction <= 1.0:
            raise ValueError("dealias_fraction must lie in (0, 1]")

    @property
    def length(self) -> float:
        return TWO_PI

    @property
    def h(self) -> float:
        """Grid spacing."""
        return TWO_PI / self.n

    @property
    def shape(self) -> tuple:
        return (self.n,) * self.dim

    @property
    def spectral_shape(self) -> tuple:
        return (self.n,) * (self.dim - 1) + (self.n // 2 + 1,)

    @cached_property
    def x(self) -> list:
        """Coordinate arrays, broadcastable to grid.shape."""
        x1 = np.arange(self.n) * self.h
        return [
            x1.reshape((1,) * i + (self.n,) + (1,) * (self.dim - 1 - i))
            for i in range(self.dim)
        ]

    @cached_property
    def k(self) -> list:
        """Integer wavenumber arrays, broadcastable to spectral_shape."""
        kfull = np.fft.fftfreq(self.n, d=1.0 / self.n)
        khalf = np.arange(self.n // 2 + 1, dtype=np.float64)
        out = []
        for i in range(self.dim):
            ki = khalf if i == self.dim - 1 else kfull
            shape = [1] * self.dim
            shape[i] = ki.size
            out.append(ki.reshape(shape))
        return out

    @cached_property
    def k_sq(self) -> np.ndarray:
        ksq = sum(ki**2 for ki in self.k)
        return np.broadcast_to(ksq, self.spectral_shape).copy()

    @cached_property
    def k_mag(self) -> np.ndarray:
        return np.sqrt(self.k_sq)

    @cached_property
    def inv_k_sq(self) -> np.ndarray:
        """1/|k|^2 with the k=0 entry set to zero (mean mode untouched)."""
        ksq = self.k_sq.copy()
        ksq.flat[0] = 1.0
        inv = 1.0 / ksq
        inv.flat[0] = 0.0
        return inv

    @property
    def dealias_cutoff(self) -> float:
        return self.dealias_fraction * self.n / 2.0

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        cut = self.dealias_cutoff
        mask = np.ones(self.spectral_shape, dtype=bool)
        for ki in self.k:
            mask &= np.abs(ki) <= cut
        return mask

    @cached_property
    def nyquist_mask(self) -> np.ndarray:
        """False on planes with any |k_i| = n/2.

        Nyquist modes on an even grid cannot support faithful derivatives and
        their half-spectrum storage slots pair two real-field modes, so
        operators that must preserve realness zero them.
        """
        mask = np.ones(self.spectral_shape, dtype=bool)
        for ki in self.k:
            mask &= np.abs(ki) < self.n // 2
        return mask

    @cached_property
    def hermitian_weights(self) -> np.ndarray:
        """Mode multiplicity for sums over the rfft half-spectrum."""
        w = np.full(self.spectral_shape, 2.0)
        klast = self.k[-1]
        sel = (klast == 0) | (klast == self.n // 2)
        w[np.broadcast_to(sel, self.spectral_shape)] = 1.0
        return w

    def component_count(self, rank: int) -> int:
        return self.dim**rank


def forward_transform(grid: Grid, f: np.ndarray, check: bool = True) -> np.ndarray:
    """Real -> spectral (rfftn, norm='forward'), component-wise over leading axes.

    check=False skips the finite-value validation (solver hot path, where
    non-finite states are detected once per step instead).
    """
    f = np.asarray(f, dtype=np.float64)
    if check and not np.all(np.isfinite(f)):
        raise ValueError("non-finite values in physical field")
    axes = tuple(range(f.ndim - grid.dim, f.ndim))
    return _fft.rfftn(f, axes=axes, norm="forward", workers=_workers)


def inverse_transform(grid: Grid, fh: np.ndarray) -> np.ndarray:
    """Spectral -> real, inverse of forward_transform."""
    axes = tuple(range(fh.ndim - grid.dim, fh.ndim))
    return _fft.irfftn(fh, s=grid.shape, axes=axes, norm="forward", workers=_workers)


def rank_of(grid: Grid, fh: np.ndarray) -> int:
    return fh.ndim - grid.dim


def spectral_gradient(grid: Grid, fh: np.ndarray) -> np.ndarray:
    """Gradient in spectral space; prepends the derivative axis."""
    rank = rank_of(grid, fh)
    if rank + 1 > 2:
        raise ValueError("gradient would exceed rank 2")
    out = np.empty((grid.dim,) + fh.shape, dtype=np.complex128)
    for i, ki in enumerate(grid.k):
        out[i] = (1j * ki) * fh
    return out


def spectral_divergence(grid: Grid, fh: np.ndarray) -> np.ndarray:
    """Contract the leading component axis with i*k."""
    if rank_of(grid, fh) < 1:
        raise ValueError("divergence needs rank >= 1")
    out = np.zeros(fh.shape[1:], dtype=np.complex128)
    for i, ki in enumerate(grid.k):
        out += (1j * ki) * fh[i]
    return out


def spectral_laplacian(grid: Grid, fh: np.ndarray) -> np.ndarray:
    return -grid.k_sq * fh


def leray_project(grid: Grid, uh: np.ndarray) -> np.ndarray:
    """Project a spectral vector field onto its divergence-free part.

    Nyquist planes are zeroed: the projector is ambiguous there and would
    break the real-field conjugate pairing of the half-spectrum storage.
    """
    if rank_of(grid, uh) != 1 or uh.shape[0] != grid.dim:
        raise ValueError("leray_project expects a rank-1 spectral field")
    kdotu = np.zeros(uh.shape[1:], dtype=np.complex128)
    for i, ki in enumerate(grid.k):
        kdotu += ki * uh[i]
    kdotu *= grid.inv_k_sq
    out = np.empty_like(uh)
    nyq = grid.nyquist_mask
    for i, ki in enumerate(grid.k):
        out[i] = (uh[i] - ki * kdotu) * nyq
    return out


def dealias(grid: Grid, fh: np.ndarray) -> np.ndarray:
    """Zero every mode with any |k_i| above the dealias cutoff."""
    return fh * grid.dealias_mask


def spectral_shift(grid: Grid, fh: np.ndarray, r) -> np.ndarray:
    """Exact periodic translation: field(x) -> field(x + r)."""
    r = np.asarray(r, dtype=np.float64)
    phase = np.zeros(grid.spectral_shape, dtype=np.float64)
    for i, ki in enumerate(grid.k):
        phase = phase + ki * r[i]
    return fh * np.exp(1j * phase)


def spectral_mean_sq(grid: Grid, fh: np.ndarray) -> float:
    """Spatial mean of the squared field, summed over components (Parseval)."""
    w = grid.hermitian_weights
    comps = fh.reshape((-1,) + grid.spectral_shape)
    return float(sum(np.sum(w * (c.real**2 + c.imag**2)) for c in comps))


def spectral_inner_mean(grid: Grid, fh: np.ndarray, gh: np.ndarray) -> float:
    """Spatial mean of f.g (components contracted), computed spectrally."""
    w = grid.hermitian_weights
    fc = fh.reshape((-1,) + grid.spectral_shape)
    gc = gh.reshape((-1,) + grid.spectral_shape)
    return float(
        sum(np.sum(w * (f.real * g.real + f.imag * g.imag)) for f, g in zip(fc, gc))
    )


def max_spectral_divergence(grid: Grid, uh: np.ndarray) -> float:
    return float(np.max(np.abs(spectral_divergence(grid, uh))))


def band_mask(grid: Grid, k_lo: float, k_hi: float) -> np.ndarray:
    """Boolean mask selecting modes with k_lo <= |k| <= k_hi."""
    kmag = grid.k_mag
    return (kmag >= k_lo) & (kmag <= k_hi)


def band_project(grid: Grid, fh: np.ndarray, k_lo: float, k_hi: float) -> np.ndarray:
    return fh * band_mask(grid, k_lo, k_hi)
