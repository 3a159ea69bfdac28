"""Eulerian statistics: spectra, structure functions, flux profiles.

Structure functions use exact spectral shifts (periodic translation by any
real offset), so separations need not be grid-aligned; angle averages share
the deterministic direction sets of the separation quadrature.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .filters import (
    FilterKernel,
    increment_inner_mean,
    mean_dissipation,
    mean_flux,
    mollify,
    unit_directions,
)
from .grid import (
    Grid,
    inverse_transform,
    spectral_inner_mean,
    spectral_shift,
)


@dataclass
class SpectrumSeries:
    """Shell-binned energy spectrum at one time."""

    k: np.ndarray
    energy: np.ndarray
    t: float = 0.0

    def total(self) -> float:
        return float(np.sum(self.energy))


def energy_spectrum(grid: Grid, uh: np.ndarray, t: float = 0.0) -> SpectrumSeries:
    """Sum of |u_hat|^2/2 over integer-|k| shells; shells sum to the energy."""
    shells = np.rint(grid.k_mag).astype(np.int64).ravel()
    w = grid.hermitian_weights.ravel()
    dens = np.zeros(grid.spectral_shape).ravel()
    for c in uh.reshape((-1,) + grid.spectral_shape):
        dens += (c.real**2 + c.imag**2).ravel()
    e = np.bincount(shells, weights=0.5 * w * dens, minlength=grid.n // 2 + 1)
    return SpectrumSeries(np.arange(e.size), e, t)


def structure_function_2(grid: Grid, uh: np.ndarray, r_list) -> np.ndarray:
    """S2(r) = <|u(x+r) - u(x)|^2> for each separation vector."""
    return np.array([increment_inner_mean(grid, uh, uh, r) for r in np.atleast_2d(r_list)])


def structure_function_2_isotropic(
    grid: Grid, uh: np.ndarray, r_mag: float, n_dirs: int | None = None
) -> float:
    """Direction-averaged S2 at separation magnitude r_mag."""
    dirs = unit_directions(grid.dim, n_dirs or (32 if grid.dim == 2 else 64))
    vals = [increment_inner_mean(grid, uh, uh, r_mag * d) for d in dirs]
    return float(np.mean(vals))


def structure_function_3L(
    grid: Grid, uh: np.ndarray, r_mags, n_dirs: int | None = None
) -> np.ndarray:
    """Angle-averaged longitudinal third-order structure function over 1/|r|.

    (1/|r|) <(rhat . delta_u(r))^3>, averaged over the deterministic
    direction set and over space.
    """
    dirs = unit_directions(grid.dim, n_dirs or (32 if grid.dim == 2 else 64))
    u = inverse_transform(grid, uh)
    out = []
    for r_mag in np.atleast_1d(r_mags):
        acc = 0.0
        for d in dirs:
            du = inverse_transform(grid, spectral_shift(grid, uh, r_mag * d)) - u
            dul = np.einsum("i,i...->...", d, du)
            acc += float(np.mean(dul**3))
        out.append(acc / len(dirs) / r_mag)
    return np.array(out)


def four_fifths_coefficient(dim: int) -> float:
    """-12/(d(d+2)): -4/5 in 3D, -3/2 in 2D."""
    return -12.0 / (dim * (dim + 2))


def four_fifths_check(
    grid: Grid,
    uh: np.ndarray,
    r_values,
    kernel_profile: str = "bump",
    n_dirs: int | None = None,
    floor: float = 1e-10,
) -> dict:
    """Tabulate S3L(r) against -12/(d(d+2)) <Pi_ell> at ell = r."""
    coeff = four_fifths_coefficient(grid.dim)
    r_values = np.atleast_1d(np.asarray(r_values, dtype=np.float64))
    s3 = structure_function_3L(grid, uh, r_values, n_dirs=n_dirs)
    pi = np.array(
        [mean_flux(grid, uh, FilterKernel(kernel_profile, r)) for r in r_values]
    )
    rhs = coeff * pi
    ratio = np.full(r_values.size, np.nan)
    ok = (np.abs(s3) > floor) & (np.abs(rhs) > floor)
    ratio[ok] = s3[ok] / rhs[ok]
    return {
        "r": r_values,
        "s3_longitudinal": s3,
        "pi_mean": pi,
        "coefficient": coeff,
        "rhs": rhs,
        "ratio": ratio,
        "indeterminate": ~ok,
    }


@dataclass
class FluxProfile:
    """<Pi_ell> across scales with the anomaly scalars for comparison."""

    ells: np.ndarray
    pi_means: np.ndarray
    dissipation: float
    input_rate: float
    tau_ells: np.ndarray = field(default=None)

    def __post_init__(self):
        ells = np.asarray(self.ells, dtype=np.float64)
        if np.any(np.diff(ells) <= 0):
            raise ValueError("ell values must be strictly increasing")
        if not (
            np.all(np.isfinite(self.pi_means))
            and np.isfinite(self.dissipation)
            and np.isfinite(self.input_rate)
        ):
            raise ValueError("flux profile entries must be finite")


def turnover_time(
    grid: Grid, uh: np.ndarray, kernel: FilterKernel, n_dirs: int | None = None
) -> float:
    """Eddy turnover at the filter scale: ell / rms velocity increment at ell."""
    ubh = mollify(grid, uh, kernel)
    s2 = structure_function_2_isotropic(grid, ubh, kernel.scale, n_dirs=n_dirs)
    if s2 <= 0.0:
        return np.inf
    return kernel.scale / np.sqrt(s2)


def flux_profile(state, ells, kernel_profile: str = "bump") -> FluxProfile:
    """<Pi_ell> per scale plus the dissipation and input-rate scalars."""
    grid = state.grid
    ells = np.sort(np.asarray(ells, dtype=np.float64))
    pis, taus = [], []
    for ell in ells:
        ker = FilterKernel(kernel_profile, ell)
        pis.append(mean_flux(grid, state.uh, ker))
        taus.append(turnover_time(grid, state.uh, ker))
    input_rate = (
        spectral_inner_mean(grid, state.uh, state.fh) if state.fh is not None else 0.0
    )
    return FluxProfile(
        ells=ells,
        pi_means=np.array(pis),
        dissipation=mean_dissipation(grid, state.uh, state.nu),
        input_rate=input_rate,
        tau_ells=np.array(taus),
    )


def integral_scale(spectrum: SpectrumSeries) -> float:
    """Spectrum-centroid integral scale 2*pi * sum(E/k) / sum(E) over k >= 1."""
    k = spectrum.k[1:]
    e = spectrum.energy[1:]
    tot = np.sum(e)
    if tot <= 0:
        return np.nan
    return float(2.0 * np.pi * np.sum(e / k) / tot)


def scale_report(state, ells=None) -> dict:
    """Dissipation-range scales, integral scale, Reynolds number, orderings.

    ell_nu = (nu^3/eps)^(1/4), tau_eta = (nu/eps)^(1/2); unavailable (None)
    when eps = 0 or nu = 0. Warns when the requested filter scales violate
    the ordering h < ell < R < L/2 needed for a clean inertial window.
    """
    grid = state.grid
    eps = mean_dissipation(grid, state.uh, state.nu)
    spectrum = energy_spectrum(grid, state.uh, state.t)
    big_l = integral_scale(spectrum)
    u_rms = np.sqrt(2.0 * state.energy() / 1.0)
    report = {
        "epsilon": eps,
        "integral_scale": big_l,
        "u_rms": u_rms,
        "reynolds": (u_rms * big_l / state.nu) if state.nu > 0 else np.inf,
        "ell_nu": None,
        "tau_eta": None,
        "warnings": [],
    }
    if state.nu > 0 and eps > 0:
        report["ell_nu"] = float((state.nu**3 / eps) ** 0.25)
        report["tau_eta"] = float((state.nu / eps) ** 0.5)
    if ells is not None:
        ells = np.sort(np.asarray(ells, dtype=np.float64))
        taus = [
            turnover_time(grid, state.uh, FilterKernel("bump", ell)) for ell in ells
        ]
        report["ells"] = ells
        report["tau_ells"] = np.array(taus)
        if report["ell_nu"] is not None and ells[0] <= report["ell_nu"]:
            report["warnings"].append(
                f"ell_min {ells[0]:.3g} <= dissipative scale {report['ell_nu']:.3g}"
            )
        if ells[0] < 4 * grid.h:
            report["warnings"].append(f"ell_min {ells[0]:.3g} < 4h")
        if np.isfinite(big_l) and ells[-1] >= big_l / 2:
            report["warnings"].append(
                f"ell_max {ells[-1]:.3g} >= L/2 = {big_l / 2:.3g}"
            )
    for msg in report["warnings"]:
        warnings.warn("scale ordering: " + msg, stacklevel=2)
    return report
