"""Command-line front end: run, disperse, diagnose, report.

Exit codes: 0 ok, 2 config error, 3 numerical abort (NaN), 4 missing data.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from . import io as cio
from .config import (
    ConfigError,
    DisperseParams,
    RunParams,
    canonical_text,
    config_hash,
    disperse_params_from,
    get_scale_list,
    parse_config,
    preset_text,
    run_params_from,
)
from .diagnostics import (
    energy_spectrum,
    flux_profile,
    four_fifths_check,
    scale_report,
    structure_function_2_isotropic,
    structure_function_3L,
)
from .experiments import (
    MissingDataError,
    aggregate_reports,
    disperse_run,
    state_from_snapshot,
    summary_text,
    write_summary,
)
from .grid import Grid, forward_transform, inverse_transform, set_fft_workers
from .solver import (
    ForcingSpec,
    SolverAbort,
    random_spectrum_velocity,
    run as solver_run,
    shear_flow_2d,
    single_mode_velocity,
    taylor_green_2d,
)


def load_config(args) -> dict:
    if args.preset and args.config:
        raise ConfigError("give either --preset or --config, not both")
    if args.preset:
        text = preset_text(args.preset)
    elif args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        text = path.read_text()
    else:
        raise ConfigError("one of --preset or --config is required")
    sections = parse_config(text)
    if args.seed is not None:
        sections.setdefault("run", {})["seed"] = str(args.seed)
    if args.deterministic is not None:
        sections.setdefault("run", {})["deterministic"] = str(args.deterministic)
    if args.threads is not None:
        sections.setdefault("run", {})["threads"] = str(args.threads)
    return sections


def initial_condition(grid: Grid, p: RunParams):
    if p.ic == "zero":
        return np.zeros((grid.dim,) + grid.spectral_shape, dtype=complex)
    if p.ic == "taylor_green":
        if grid.dim != 2:
            raise ConfigError("taylor_green initial condition is 2D")
        return taylor_green_2d(grid, amplitude=p.ic_amplitude)
    if p.ic == "shear":
        if grid.dim != 2:
            raise ConfigError("shear initial condition is 2D")
        return shear_flow_2d(grid, amplitude=p.ic_amplitude)
    if p.ic == "random":
        uh = random_spectrum_velocity(grid, p.ic_energy, p.ic_k_peak, p.seed)
        if p.band_limit is not None:
            uh = uh * (grid.k_mag <= p.band_limit)
            from .grid import spectral_mean_sq

            e = 0.5 * spectral_mean_sq(grid, uh)
            if e > 0 and p.ic_energy > 0:
                uh *= np.sqrt(p.ic_energy / e)
        return uh
    if p.ic == "single_mode":
        return single_mode_velocity(grid, (int(p.ic_k_peak),) + (0,) * (grid.dim - 1), p.ic_amplitude)
    raise ConfigError(f"unknown initial condition {p.ic!r}")


def forcing_spec_from(p: RunParams) -> ForcingSpec:
    return ForcingSpec(
        kind=p.forcing_kind,
        k_f=p.k_f,
        amplitude_law=p.amplitude_law,
        epsilon_in=p.epsilon_in,
        amplitude=p.amplitude,
        alpha=p.alpha,
        seed=p.seed,
        mix=p.mix,
        shell_halfwidth=p.shell_halfwidth,
    )


def cmd_run(args) -> int:
    sections = load_config(args)
    p = run_params_from(sections)
    set_fft_workers(1 if p.deterministic else p.threads)
    out = Path(args.out or "run_out")
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(canonical_text(sections))
    grid = Grid(p.dim, p.n)
    uh0 = initial_condition(grid, p)
    extra = {
        "config_hash": config_hash(sections),
        "deterministic": int(p.deterministic),
        "friction_kmax": p.friction_kmax,
        "ic": p.ic,
    }
    state = solver_run(
        out,
        grid,
        uh0,
        nu=p.nu,
        dt=p.dt,
        n_steps=p.n_steps,
        forcing_spec=forcing_spec_from(p),
        snapshot_every=p.snapshot_every,
        friction_mu=p.friction_mu,
        friction_kmax=p.friction_kmax,
        manifest_extra=extra,
    )
    if p.ic == "taylor_green" and p.forcing_kind == "none" and p.dim == 2:
        exact = np.exp(-2.0 * p.nu * state.t) * taylor_green_2d(grid, p.ic_amplitude)
        err = float(
            np.max(np.abs(inverse_transform(grid, state.uh - exact)))
        )
        manifest = cio.read_manifest(out / "manifest.txt")
        manifest["taylor_green_max_error"] = repr(err)
        cio.write_manifest(out / "manifest.txt", manifest)
    print(f"run complete: t={state.t:.6g}, E={state.energy():.6g} -> {out}")
    return 0


def _run_dir_sections(args):
    run_dir = Path(args.run_dir)
    cfg_path = run_dir / "config.txt"
    if args.config or args.preset:
        return load_config(args), run_dir
    if not cfg_path.exists():
        raise MissingDataError(f"no config.txt in {run_dir}; pass --config")
    return parse_config(cfg_path.read_text()), run_dir


def cmd_disperse(args) -> int:
    sections, run_dir = _run_dir_sections(args)
    manifest = cio.read_manifest(run_dir / "manifest.txt")
    grid_h = 2 * np.pi / int(manifest["n"])
    dparams = disperse_params_from(sections, grid_h)
    out = Path(args.out or run_dir / "disperse")
    paths = disperse_run(run_dir, dparams, config_hash(sections), out)
    print(f"wrote {len(paths)} dispersion reports -> {out}")
    return 0


def cmd_diagnose(args) -> int:
    sections, run_dir = _run_dir_sections(args)
    manifest = cio.read_manifest(run_dir / "manifest.txt")
    snaps = cio.list_snapshots(run_dir)
    final = run_dir / "final.cscd"
    snap_path = final if final.exists() else (snaps[-1] if snaps else None)
    if snap_path is None:
        raise MissingDataError(f"no snapshots in {run_dir}")
    state = state_from_snapshot(snap_path, manifest)
    grid = state.grid
    out = Path(args.out or run_dir / "diagnose")
    out.mkdir(parents=True, exist_ok=True)
    chash = config_hash(sections)

    sp = energy_spectrum(grid, state.uh, state.t)
    with open(out / "spectrum.csv", "w") as fh:
        fh.write(f"# config_hash={chash} t={state.t!r}\n")
        fh.write("k,E\n")
        for k, e in zip(sp.k, sp.energy):
            fh.write(f"{int(k)},{float(e)!r}\n")

    ells = get_scale_list(sections, "diagnose", "ells", grid.h)
    if ells is None:
        ells = [m * grid.h for m in (4, 6, 8, 12, 16, 24)]
    ells = sorted(set(ells))
    prof = flux_profile(state, ells)
    with open(out / "flux_profile.csv", "w") as fh:
        fh.write(
            f"# config_hash={chash} dissipation={prof.dissipation!r} "
            f"input_rate={prof.input_rate!r}\n"
        )
        fh.write("ell,pi_mean,tau_ell\n")
        for ell, pi, tau in zip(prof.ells, prof.pi_means, prof.tau_ells):
            fh.write(f"{float(ell)!r},{float(pi)!r},{float(tau)!r}\n")

    with open(out / "structure_functions.csv", "w") as fh:
        fh.write(f"# config_hash={chash}\n")
        fh.write("r,S2,S3L\n")
        s3 = structure_function_3L(grid, state.uh, ells)
        for i, r in enumerate(ells):
            s2 = structure_function_2_isotropic(grid, state.uh, r)
            fh.write(f"{float(r)!r},{float(s2)!r},{float(s3[i])!r}\n")

    tab = four_fifths_check(grid, state.uh, ells)
    with open(out / "four_fifths.csv", "w") as fh:
        fh.write(f"# config_hash={chash} coefficient={tab['coefficient']!r}\n")
        fh.write("r,s3_longitudinal,pi_mean,rhs,ratio,indeterminate\n")
        for i in range(len(ells)):
            fh.write(
                f"{float(tab['r'][i])!r},{float(tab['s3_longitudinal'][i])!r},"
                f"{float(tab['pi_mean'][i])!r},{float(tab['rhs'][i])!r},"
                f"{float(tab['ratio'][i])!r},{int(tab['indeterminate'][i])}\n"
            )

    rep = scale_report(state, ells=ells)
    entries = {"config_hash": chash}
    for key in ("epsilon", "integral_scale", "u_rms", "reynolds", "ell_nu", "tau_eta"):
        entries[key] = repr(float(rep[key])) if rep[key] is not None else "unavailable"
    entries["warnings"] = "; ".join(rep["warnings"])
    cio.write_report(out / "scales.txt", entries)
    print(f"diagnostics -> {out}")
    return 0


def cmd_report(args) -> int:
    paths = []
    for item in args.reports:
        p = Path(item)
        if p.is_dir():
            paths.extend(sorted(p.glob("report_*.txt")))
        else:
            paths.append(p)
    if not paths:
        raise MissingDataError("no report files given")
    summary = aggregate_reports(paths)
    out = Path(args.out or "summary.csv")
    write_summary(summary, out)
    print(summary_text(summary))
    print(f"summary -> {out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cascade-lab",
        description=(
            "pseudo-spectral turbulence laboratory: cascade diagnostics and "
            "pair-dispersion time-asymmetry experiments"
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp, run_dir=False):
        sp.add_argument("--config", help="path to a key=value config file")
        sp.add_argument("--preset", help="named preset configuration")
        sp.add_argument("--out", help="output directory/file")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--deterministic", type=int, default=None, choices=(0, 1))
        sp.add_argument("--threads", type=int, default=None)
        if run_dir:
            sp.add_argument("run_dir", help="existing run directory")

    sp_run = sub.add_parser("run", help="integrate a configured run")
    common(sp_run)
    sp_run.set_defaults(func=cmd_run)

    sp_disp = sub.add_parser("disperse", help="dispersion-asymmetry experiments")
    common(sp_disp, run_dir=True)
    sp_disp.set_defaults(func=cmd_disperse)

    sp_diag = sub.add_parser("diagnose", help="spectra/structure-function/flux CSVs")
    common(sp_diag, run_dir=True)
    sp_diag.set_defaults(func=cmd_diagnose)

    sp_rep = sub.add_parser("report", help="merge dispersion reports")
    sp_rep.add_argument("reports", nargs="+", help="report files or directories")
    sp_rep.add_argument("--out", help="summary CSV path")
    sp_rep.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except SolverAbort as err:
        print(f"numerical abort: {err}", file=sys.stderr)
        return 3
    except MissingDataError as err:
        print(f"missing data: {err}", file=sys.stderr)
        return 4
    except ValueError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
