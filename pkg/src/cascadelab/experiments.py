"""End-to-end dispersion-asymmetry experiments over stored runs.

For each release snapshot the solver is re-integrated through a short,
finely stepped window centered on the release time t0 (the active force is
held fixed across the window); tracer pairs are advected forward and
backward through the stored frames; the asymmetry fit, both Ott-Mann
estimators, and the Eulerian anomaly scalars are written as one report per
(ell, R, t0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io as cio
from .config import DisperseParams, RunParams
from .diagnostics import energy_spectrum, integral_scale, turnover_time
from .filters import FilterKernel, mean_dissipation, mean_flux, separation_quadrature
from .grid import Grid, dealias, spectral_inner_mean
from .solver import FlowState, step as solver_step
from .tracers import (
    SnapshotWindow,
    VelocitySampler,
    advect,
    asymmetry_coefficient,
    dispersion_curves,
    eulerian_pair_structure,
    frozen_window,
    lattice_points,
    make_pair_ensemble,
    ottmann_eulerian,
    ottmann_lagrangian,
)


class MissingDataError(RuntimeError):
    """Run directory lacks the snapshots needed; exit code 4 at the CLI."""


def state_from_snapshot(path, manifest) -> FlowState:
    snap = cio.read_snapshot_file(path)
    grid = snap["grid"]
    uh = dealias(grid, snap["uh"])
    fh = snap["fh"]
    if fh is not None:
        fh = dealias(grid, fh)
    return FlowState(
        grid=grid,
        uh=uh,
        t=snap["t"],
        nu=snap["nu"],
        fh=fh,
        friction_mu=float(manifest.get("friction_mu", 0.0)),
        friction_kmax=float(manifest.get("friction_kmax", 2.0)),
    )


def solve_window_with_center(state, dt, n_half):
    """Integrate 2*n_half steps keeping every frame; return window + center."""
    frames = [state.uh.copy()]
    cur = state
    center = None
    for j in range(2 * n_half):
        cur = solver_step(cur, dt, forcing=None, check_cfl=False)
        frames.append(cur.uh.copy())
        if j + 1 == n_half:
            center = cur
    window = SnapshotWindow(state.grid, state.t, dt, frames)
    return window, center, cur


@dataclass
class DispersionReport:
    ell: float
    radius: float
    t0: float
    a0: float
    c1: float
    fit_residual: float
    flagged: bool
    om_lagrangian: float
    om_eulerian: float
    om_eulerian_sampled: float
    pi_mean: float
    dissipation: float
    input_rate: float
    tau_ell: float
    s2_pair: float
    config_hash: str
    warnings: str = ""

    def to_entries(self) -> dict:
        out = {}
        for name in (
            "ell",
            "radius",
            "t0",
            "a0",
            "c1",
            "fit_residual",
            "om_lagrangian",
            "om_eulerian",
            "om_eulerian_sampled",
            "pi_mean",
            "dissipation",
            "input_rate",
            "tau_ell",
            "s2_pair",
        ):
            out[name] = repr(float(getattr(self, name)))
        out["flagged"] = int(self.flagged)
        out["config_hash"] = self.config_hash
        out["warnings"] = self.warnings
        out["tolerance_note"] = (
            "finite-scale estimates; tolerances are engineering choices"
        )
        return out


def _scale_warnings(grid, ell, radius, big_l):
    notes = []
    if ell < 4 * grid.h:
        notes.append(f"ell {ell:.3g} < 4h")
    if radius <= ell:
        notes.append(f"R {radius:.3g} <= ell")
    if np.isfinite(big_l) and radius >= big_l / 2:
        notes.append(f"R {radius:.3g} >= L/2 = {big_l / 2:.3g}")
    return "; ".join(notes)


def disperse_release(
    state0: FlowState,
    dparams: DisperseParams,
    cfg_hash: str,
    out_dir,
    tag: str,
    release_index: int = 0,
) -> list:
    """All (ell, R) reports for one release snapshot; returns report paths."""
    grid = state0.grid
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ells = list(dparams.ells)

    tau_ells = {}
    for ell in ells:
        tau_ells[ell] = turnover_time(grid, state0.uh, FilterKernel("bump", ell))
    finite_taus = [t for t in tau_ells.values() if np.isfinite(t)]
    frozen = dparams.frozen or not finite_taus

    if frozen:
        window = frozen_window(grid, state0.uh)
        center = state0
        # lag scale from the largest finite turnover, or an O(1) fallback
        tau_ref = min(finite_taus) if finite_taus else 1.0
        dt_w = dparams.tau_min_factor * tau_ref / 4.0
        t0 = state0.t
    else:
        tau_ref = min(finite_taus)
        dt_w = dparams.tau_min_factor * tau_ref / 4.0
        max_lag = 0
        for ell in ells:
            smin = max(1, round(dparams.tau_min_factor * tau_ells[ell] / dt_w))
            max_lag = max(max_lag, smin * 2 ** (dparams.n_lags - 1))
        n_half = max_lag + 2
        window, center, _ = solve_window_with_center(state0, dt_w, n_half)
        t0 = state0.t + n_half * dt_w

    big_l = integral_scale(energy_spectrum(grid, center.uh))
    base = lattice_points(
        grid,
        dparams.base_per_axis or (16 if grid.dim == 2 else 8),
        shift_index=release_index,
    )
    paths = []
    for ell in ells:
        kernel = FilterKernel("bump", ell)
        radius = dparams.r_factor * ell
        quad = separation_quadrature(
            grid.dim,
            radius,
            grid_h=grid.h,
            profile=dparams.psi_profile,
            n_dirs=dparams.n_dirs,
            n_radii=dparams.n_radii,
        )
        smin = max(1, round(dparams.tau_min_factor * tau_ells[ell] / dt_w))
        lags = [smin * 2**m for m in range(dparams.n_lags)]
        sampler = VelocitySampler(window, kernel, refine=dparams.refine)
        ens = make_pair_ensemble(
            grid, t0, quad, ell, lags, dt_w, base_points=base
        )
        advect(ens, sampler, +1)
        advect(ens, sampler, -1)
        fit = asymmetry_coefficient(ens, residual_threshold=dparams.residual_threshold)
        om_l = ottmann_lagrangian(ens)
        om_e = ottmann_eulerian(center, kernel, quad, frozen=frozen)
        om_es = ottmann_eulerian(
            center, kernel, quad, frozen=frozen, x_points=base, refine=dparams.refine
        )
        input_rate = (
            spectral_inner_mean(grid, center.uh, center.fh)
            if center.fh is not None
            else 0.0
        )
        report = DispersionReport(
            ell=ell,
            radius=radius,
            t0=t0,
            a0=fit.a0,
            c1=fit.c1,
            fit_residual=fit.residual,
            flagged=fit.flagged,
            om_lagrangian=om_l,
            om_eulerian=om_e,
            om_eulerian_sampled=om_es,
            pi_mean=mean_flux(grid, center.uh, kernel),
            dissipation=mean_dissipation(grid, center.uh, center.nu),
            input_rate=input_rate,
            tau_ell=tau_ells[ell],
            s2_pair=eulerian_pair_structure(center, kernel, quad),
            config_hash=cfg_hash,
            warnings=_scale_warnings(grid, ell, radius, big_l),
        )
        stem = f"report_{tag}_ell{ell:.6g}"
        cio.write_report(out_dir / f"{stem}.txt", report.to_entries())
        curves = dispersion_curves(ens)
        with open(out_dir / f"{stem}_curves.csv", "w") as fh:
            fh.write("ell,R,tau,fwd,bwd,A\n")
            for i in range(curves["tau"].size):
                fh.write(
                    f"{ell!r},{radius!r},{curves['tau'][i]!r},"
                    f"{curves['fwd'][i]!r},{curves['bwd'][i]!r},{curves['A'][i]!r}\n"
                )
        paths.append(out_dir / f"{stem}.txt")
    return paths


def disperse_run(run_dir, dparams: DisperseParams, cfg_hash: str, out_dir) -> list:
    """Run the dispersion pipeline over the last n_releases snapshots."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "manifest.txt"
    if not manifest_path.exists():
        raise MissingDataError(f"no manifest in {run_dir}")
    manifest = cio.read_manifest(manifest_path)
    snaps = cio.list_snapshots(run_dir)
    if not snaps:
        raise MissingDataError(f"no snapshots in {run_dir}")
    releases = snaps[-dparams.n_releases :]
    if len(releases) < dparams.n_releases:
        raise MissingDataError(
            f"requested {dparams.n_releases} releases but only "
            f"{len(releases)} snapshots are stored"
        )
    paths = []
    for idx, snap_path in enumerate(releases):
        state0 = state_from_snapshot(snap_path, manifest)
        tag = snap_path.stem.replace("snap_", "t")
        paths.extend(
            disperse_release(
                state0, dparams, cfg_hash, out_dir, tag, release_index=idx
            )
        )
    return paths


# ---------------------------------------------------------------------------
# Report aggregation
# ---------------------------------------------------------------------------

AGGREGATE_FIELDS = [
    "a0",
    "om_lagrangian",
    "om_eulerian",
    "om_eulerian_sampled",
    "pi_mean",
    "dissipation",
    "input_rate",
]


def aggregate_reports(report_paths) -> dict:
    """Merge reports across release times: mean and stderr per (ell, R)."""
    groups: dict = {}
    hashes = set()
    for path in report_paths:
        rep = cio.read_report(path)
        hashes.add(rep.get("config_hash", ""))
        key = (float(rep["ell"]), float(rep["radius"]))
        groups.setdefault(key, []).append(rep)
    if len(hashes) > 1:
        raise ValueError(
            f"refusing to merge reports with mixed config hashes: {sorted(hashes)}"
        )
    summary = {"config_hash": next(iter(hashes)) if hashes else "", "rows": []}
    for (ell, radius) in sorted(groups):
        reps = groups[(ell, radius)]
        row = {"ell": ell, "radius": radius, "n_reports": len(reps)}
        for name in AGGREGATE_FIELDS:
            vals = np.array([float(r[name]) for r in reps])
            row[name] = float(np.mean(vals))
            row[name + "_stderr"] = float(
                np.std(vals, ddof=1) / math.sqrt(len(vals)) if len(vals) > 1 else 0.0
            )
        row["warnings"] = "; ".join(sorted({r["warnings"] for r in reps if r["warnings"]}))
        summary["rows"].append(row)
    return summary


def write_summary(summary: dict, out_path) -> None:
    fields = ["ell", "radius", "n_reports"]
    for name in AGGREGATE_FIELDS:
        fields += [name, name + "_stderr"]
    with open(out_path, "w") as fh:
        fh.write(f"# config_hash={summary['config_hash']}\n")
        fh.write(",".join(fields + ["warnings"]) + "\n")
        for row in summary["rows"]:
            cells = [repr(row[f]) if isinstance(row[f], float) else str(row[f]) for f in fields]
            fh.write(",".join(cells + [f"\"{row['warnings']}\""]) + "\n")


def summary_text(summary: dict) -> str:
    lines = [
        f"config {summary['config_hash']}: anomaly estimates per (ell, R), "
        "mean +- stderr over release times"
    ]
    for row in summary["rows"]:
        lines.append(
            f"  ell={row['ell']:.5g} R={row['radius']:.5g} (n={row['n_reports']}): "
            f"A0={row['a0']:+.4g}+-{row['a0_stderr']:.2g}  "
            f"OM_L={row['om_lagrangian']:+.4g}  OM_E={row['om_eulerian']:+.4g}  "
            f"<Pi>={row['pi_mean']:+.4g}+-{row['pi_mean_stderr']:.2g}  "
            f"nu<|grad u|^2>={row['dissipation']:.4g}  <u.f>={row['input_rate']:.4g}"
        )
        if row["warnings"]:
            lines.append(f"    warnings: {row['warnings']}")
    return "\n".join(lines)
