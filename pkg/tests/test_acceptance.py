"""Acceptance suite: every criterion at its stated tolerance.

Each test prints one PASS/FAIL line (run with -s to stream them). The 2D
512^2 and 3D 64^3 experiments are produced once per session by fixtures and
shared by the criteria that consume them.
"""

import time
from pathlib import Path

import numpy as np
import pytest

from cascadelab import io as cio
from cascadelab.cli import main as cli_main
from cascadelab.config import PRESETS, config_hash, parse_config
from cascadelab.diagnostics import (
    energy_spectrum,
    structure_function_3L,
    four_fifths_coefficient,
)
from cascadelab.experiments import (
    aggregate_reports,
    disperse_release,
    state_from_snapshot,
    solve_window_with_center,
)
from cascadelab.filters import (
    FilterKernel,
    bump_profile,
    flux_pi,
    mean_flux,
    mollify_physical,
    resolved_budget,
    separation_quadrature,
)
from cascadelab.grid import (
    Grid,
    forward_transform,
    inverse_transform,
    leray_project,
    spectral_inner_mean,
    spectral_mean_sq,
)
from cascadelab.solver import (
    FlowState,
    ForcingSpec,
    advance,
    dissipation_rate,
    make_forcing,
    make_shell_forcing,
    random_spectrum_velocity,
    shear_flow_2d,
)
from cascadelab.tracers import (
    VelocitySampler,
    advect,
    asymmetry_coefficient,
    eulerian_pair_structure,
    frozen_window,
    lattice_points,
    make_pair_ensemble,
    ottmann_eulerian,
    ottmann_lagrangian,
)

pytestmark = pytest.mark.filterwarnings("ignore::UserWarning")


def verdict(name: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {name}: {detail}")


def run_preset(tmp_factory, preset: str) -> Path:
    out = tmp_factory.mktemp(preset)
    rc = cli_main(["run", "--preset", preset, "--out", str(out)])
    assert rc == 0, f"{preset} run failed with exit code {rc}"
    return out


def disperse_preset(run_dir: Path) -> Path:
    rc = cli_main(["disperse", str(run_dir)])
    assert rc == 0, f"disperse failed with exit code {rc}"
    return run_dir / "disperse"


@pytest.fixture(scope="session")
def inverse2d_dir(tmp_path_factory):
    t0 = time.time()
    out = run_preset(tmp_path_factory, "inverse2d")
    disperse_preset(out)
    print(f"(inverse2d fixture: {time.time() - t0:.0f}s)")
    return out


@pytest.fixture(scope="session")
def direct3d_dir(tmp_path_factory):
    t0 = time.time()
    out = run_preset(tmp_path_factory, "direct3d")
    disperse_preset(out)
    print(f"(direct3d fixture: {time.time() - t0:.0f}s)")
    return out


def load_summary(run_dir: Path) -> dict:
    reports = sorted((run_dir / "disperse").glob("report_*.txt"))
    return aggregate_reports(reports)


class TestCriterion1:
    def test_taylor_green_exact(self, tmp_path):
        t0 = time.time()
        out = tmp_path / "tg"
        assert cli_main(["run", "--preset", "taylor_green", "--out", str(out)]) == 0
        err = float(cio.read_manifest(out / "manifest.txt")["taylor_green_max_error"])
        elapsed = time.time() - t0
        ok = err <= 1e-6 and elapsed < 10.0
        verdict(
            "criterion 1 (Taylor-Green verification)",
            ok,
            f"max-norm error {err:.3e} (tol 1e-6), runtime {elapsed:.1f}s (< 10s)",
        )
        assert ok


class TestCriterion2:
    def test_mollify_against_direct_quadrature(self):
        t0 = time.time()
        grid = Grid(2, 32)
        ker = FilterKernel("bump", 0.5)
        rng = np.random.default_rng(20)
        u = rng.standard_normal(grid.shape)
        via_fft = mollify_physical(grid, u, ker)
        r_sq = np.zeros(grid.shape)
        for xi in grid.x:
            d = np.minimum(xi, 2 * np.pi - xi)
            r_sq = r_sq + d**2
        g = bump_profile(np.sqrt(r_sq) / ker.scale)
        g = g / (g.sum() * grid.h**2)
        direct = np.zeros(grid.shape)
        for i in range(grid.n):
            for j in range(grid.n):
                if g[i, j] != 0.0:
                    direct += g[i, j] * np.roll(u, (-i, -j), axis=(0, 1)) * grid.h**2
        rel = np.max(np.abs(via_fft - direct)) / np.max(np.abs(via_fft))
        elapsed = time.time() - t0
        ok = rel <= 1e-8 and elapsed < 5.0
        verdict(
            "criterion 2 (mollify FFT vs direct quadrature)",
            ok,
            f"relative error {rel:.3e} (tol 1e-8), runtime {elapsed:.1f}s (< 5s)",
        )
        assert ok


class TestCriterion3:
    def test_ottmann_identity_frozen_smooth(self):
        grid = Grid(2, 128)
        rng = np.random.default_rng(21)
        gh = leray_project(
            grid, forward_transform(grid, rng.standard_normal((2,) + grid.shape))
        )
        kmag = np.maximum(grid.k_mag, 1e-9)
        amp = kmag ** (-1.3) * (kmag <= 10.0)
        amp.flat[0] = 0.0
        uh = gh * amp
        uh *= np.sqrt(0.5 / (0.5 * spectral_mean_sq(grid, uh)))
        ell = 8 * grid.h
        ker = FilterKernel("bump", ell)
        state = FlowState(grid=grid, uh=uh)
        quad = separation_quadrature(2, 3 * ell)
        om_e = ottmann_eulerian(state, ker, quad, frozen=True)
        s2 = eulerian_pair_structure(state, ker, quad)
        dt = 1e-3 * (ell / np.sqrt(s2)) / 4
        samp = VelocitySampler(frozen_window(grid, uh), ker, refine=2)
        ens = make_pair_ensemble(
            grid, 0.0, quad, ell, [4, 8], dt, base_points=lattice_points(grid, 32)
        )
        advect(ens, samp, +1)
        advect(ens, samp, -1)
        om_l = ottmann_lagrangian(ens)
        rel = abs(om_l - om_e) / abs(om_e)
        ok = rel <= 1e-3
        verdict(
            "criterion 3a (Ott-Mann identity, frozen smooth field)",
            ok,
            f"OM_L {om_l:+.5f} vs OM_E {om_e:+.5f}, rel {rel:.2e} (tol 1e-3)",
        )
        assert ok

    def test_ottmann_identity_turbulent_2d(self, inverse2d_dir):
        t0 = time.time()
        manifest = cio.read_manifest(inverse2d_dir / "manifest.txt")
        snap = cio.list_snapshots(inverse2d_dir)[-1]
        state = state_from_snapshot(snap, manifest)
        grid = state.grid
        ell = 12 * grid.h
        ker = FilterKernel("bump", ell)
        quad = separation_quadrature(2, 3 * ell, n_dirs=24)
        from cascadelab.diagnostics import turnover_time

        tau_ell = turnover_time(grid, state.uh, ker)
        dt_w = 1e-3 * tau_ell / 4
        n_half = 10
        window, center, _ = solve_window_with_center(state, dt_w, 2 * n_half + 4)
        t0r = state.t + (n_half + 2) * dt_w
        bases = lattice_points(grid, 14)
        om_e = ottmann_eulerian(center, ker, quad, x_points=bases)
        samp = VelocitySampler(window, ker, refine=2)
        ens = make_pair_ensemble(
            grid, t0r, quad, ell, [4, 8], dt_w, base_points=bases
        )
        advect(ens, samp, +1)
        advect(ens, samp, -1)
        om_l = ottmann_lagrangian(ens)
        rel = abs(om_l - om_e) / abs(om_e)
        elapsed = time.time() - t0
        ok = rel <= 5e-2 and elapsed < 120.0
        verdict(
            "criterion 3b (Ott-Mann identity, turbulent 2D snapshot)",
            ok,
            f"OM_L {om_l:+.5f} vs OM_E {om_e:+.5f}, rel {rel:.2e} (tol 5e-2), "
            f"runtime {elapsed:.0f}s (< 120s)",
        )
        assert ok


class TestCriterion4:
    def test_inverse_cascade_asymmetry(self, inverse2d_dir):
        summary = load_summary(inverse2d_dir)
        lines = []
        ok = True
        for row in summary["rows"]:
            a0, pi = row["a0"], row["pi_mean"]
            n = row["n_reports"]
            this = (n >= 8) and (a0 > 0) and (pi < 0) and (abs(a0 + pi) <= 0.3 * abs(pi))
            ok &= this
            lines.append(
                f"ell={row['ell']:.4g}: A0={a0:+.5f}+-{row['a0_stderr']:.1g} "
                f"<Pi>={pi:+.5f} |A0-(-Pi)|/|Pi|={abs(a0 + pi) / abs(pi):.2f} (n={n})"
            )
        verdict(
            "criterion 4 (2D inverse cascade: A0 > 0, <Pi> < 0, 30% match)",
            ok,
            "; ".join(lines),
        )
        assert ok


class TestCriterion5:
    def test_direct_cascade_asymmetry(self, direct3d_dir):
        summary = load_summary(direct3d_dir)
        lines = []
        ok = True
        for row in summary["rows"]:
            a0, eps = row["a0"], row["dissipation"]
            n = row["n_reports"]
            this = (n >= 8) and (a0 < 0) and (abs(a0 + eps) <= 0.3 * eps)
            ok &= this
            lines.append(
                f"ell={row['ell']:.4g}: A0={a0:+.5f}+-{row['a0_stderr']:.1g} "
                f"eps={eps:.5f} |A0+eps|/eps={abs(a0 + eps) / eps:.2f} (n={n})"
            )
        verdict(
            "criterion 5 (3D direct cascade: A0 < 0, 30% match to dissipation)",
            ok,
            "; ".join(lines),
        )
        assert ok


class TestCriterion6:
    def test_shear_null(self, tmp_path_factory):
        t0 = time.time()
        out = run_preset(tmp_path_factory, "shear_null")
        disperse_preset(out)
        grid = Grid(2, 64)
        uh = shear_flow_2d(grid)
        pi_max = np.max(np.abs(flux_pi(grid, uh, FilterKernel("bump", 8 * grid.h))))
        rep = cio.read_report(sorted((out / "disperse").glob("report_*.txt"))[0])
        a0 = float(rep["a0"])
        resid = float(rep["fit_residual"])
        elapsed = time.time() - t0
        ok = pi_max < 1e-12 and abs(a0) <= max(resid, 1e-9) and elapsed < 60.0
        verdict(
            "criterion 6 (parallel-shear null test)",
            ok,
            f"max|Pi| {pi_max:.2e} (tol 1e-12), |A0| {abs(a0):.2e} vs residual "
            f"{resid:.2e}, runtime {elapsed:.0f}s (< 60s)",
        )
        assert ok


class TestCriterion7:
    def test_smooth_flux_scaling_slope(self):
        t0 = time.time()
        grid = Grid(3, 128)
        rng = np.random.default_rng(0)
        uh = leray_project(
            grid, forward_transform(grid, rng.standard_normal((3,) + grid.shape))
        )
        uh = uh * (grid.k_mag <= 1.01)
        ells = np.array([4, 5.66, 8, 11.3, 16, 22.6, 32, 40]) * grid.h
        vals = [
            np.mean(np.abs(flux_pi(grid, uh, FilterKernel("bump", ell))))
            for ell in ells
        ]
        slope = float(np.polyfit(np.log(ells), np.log(vals), 1)[0])
        elapsed = time.time() - t0
        ok = 1.7 <= slope <= 2.3 and elapsed < 60.0
        verdict(
            "criterion 7 (smooth-field flux scaling over one decade)",
            ok,
            f"log-log slope {slope:.3f} (in [1.7, 2.3]), runtime {elapsed:.0f}s (< 60s)",
        )
        assert ok


class TestCriterion8:
    def test_four_fifths_consistency(self, direct3d_dir):
        t0 = time.time()
        manifest = cio.read_manifest(direct3d_dir / "manifest.txt")
        state = state_from_snapshot(direct3d_dir / "final.cscd", manifest)
        grid = state.grid
        coeff = four_fifths_coefficient(3)
        ok = coeff == -0.8
        rs = np.array([5, 6, 8]) * grid.h  # declared inertial window
        s3 = structure_function_3L(grid, state.uh, rs, n_dirs=48)
        lines = [f"coefficient {coeff}"]
        for r, s in zip(rs, s3):
            pi = mean_flux(grid, state.uh, FilterKernel("bump", r))
            rhs = coeff * pi
            rel = abs(s - rhs) / abs(rhs)
            ok &= rel <= 0.4
            lines.append(f"r={r:.3g}: S3L={s:+.5f} vs -0.8<Pi>={rhs:+.5f} rel={rel:.2f}")
        elapsed = time.time() - t0
        ok &= elapsed < 300.0
        verdict(
            "criterion 8 (4/5-law consistency on direct3d)",
            ok,
            "; ".join(lines) + f", runtime {elapsed:.0f}s (< 300s)",
        )
        assert ok


class TestCriterion9:
    def test_forcing_remark(self, tmp_path_factory):
        t0 = time.time()
        grid = Grid(2, 512)
        base_spec = ForcingSpec(
            kind="shell", k_f=8.0, epsilon_in=0.1, seed=31, mix=0.25,
            shell_halfwidth=1.0,
        )
        state = FlowState(
            grid=grid,
            uh=random_spectrum_velocity(grid, 0.02, 6.0, seed=31),
            nu=1e-4,
        )
        state, _ = advance(
            state, 5e-4, 2500, forcing=make_forcing(base_spec), record=False
        )
        inputs = {}
        exact = {}
        for k_f in (32.0, 64.0):
            amp_spec = ForcingSpec(
                kind="shell", k_f=k_f, amplitude_law="fixed_amplitude",
                amplitude=0.05, seed=32, mix=0.0,
            )
            s, recs = advance(
                state, 5e-4, 50, forcing=make_forcing(amp_spec)
            )
            inputs[k_f] = float(np.mean([r.input_rate for r in recs]))
            rate_spec = ForcingSpec(
                kind="shell", k_f=k_f, epsilon_in=0.1, seed=33, mix=0.25,
            )
            fh = make_shell_forcing(rate_spec)(state, 0)
            exact[k_f] = spectral_inner_mean(grid, state.uh, fh)
        ratio = inputs[32.0] / inputs[64.0]
        exact_ok = all(abs(v - 0.1) < 1e-12 for v in exact.values())
        elapsed = time.time() - t0
        ok = ratio >= 2.0 and exact_ok and elapsed < 1200.0
        verdict(
            "criterion 9 (high-k_f forcing cannot sustain the cascade)",
            ok,
            f"fixed_amplitude <u.f>: k_f=32 {inputs[32.0]:.3e}, k_f=64 "
            f"{inputs[64.0]:.3e}, ratio {ratio:.2f} (>= 2); fixed_input_rate "
            f"exact to {max(abs(v - 0.1) for v in exact.values()):.1e} (tol 1e-12); "
            f"runtime {elapsed:.0f}s (< 1200s)",
        )
        assert ok


class TestCriterion10:
    def test_global_budget_per_step(self, inverse2d_dir, direct3d_dir):
        worst = {}
        for name, d in (("inverse2d", inverse2d_dir), ("direct3d", direct3d_dir)):
            ts = cio.read_timeseries(d / "timeseries.csv")
            worst[name] = float(np.max(ts["budget_residual_rel"]))
        ok = all(v <= 1e-5 for v in worst.values())
        verdict(
            "criterion 10a (global budget closes to 1e-5 per step)",
            ok,
            ", ".join(f"{k}: worst {v:.2e}" for k, v in worst.items()),
        )
        assert ok

    def test_resolved_budget_time_integrated(self, inverse2d_dir):
        t0 = time.time()
        manifest = cio.read_manifest(inverse2d_dir / "manifest.txt")
        state = state_from_snapshot(inverse2d_dir / "final.cscd", manifest)
        grid = state.grid
        ker = FilterKernel("bump", 12 * grid.h)
        dt = 5e-4
        mult = ker.multiplier(grid)

        def resolved_energy(s):
            return 0.5 * spectral_mean_sq(grid, s.uh * mult)

        rhs_series = []
        e_series = [resolved_energy(state)]
        cur = state
        for _ in range(100):
            bt = resolved_budget(cur, ker)
            means = bt.means()
            rhs_series.append(
                -means["flux"] + means["forcing_work"] - means["viscous_diss"]
                - means["friction_work"]
            )
            cur = advance(cur, dt, 1, record=False)[0]
            e_series.append(resolved_energy(cur))
        bt = resolved_budget(cur, ker)
        means = bt.means()
        rhs_series.append(
            -means["flux"] + means["forcing_work"] - means["viscous_diss"]
            - means["friction_work"]
        )
        rhs = np.array(rhs_series)
        integral = dt * (0.5 * rhs[0] + rhs[1:-1].sum() + 0.5 * rhs[-1])
        delta_e = e_series[-1] - e_series[0]
        scale = dt * np.sum(np.abs(rhs))
        rel = abs(delta_e - integral) / scale
        elapsed = time.time() - t0
        ok = rel <= 1e-4
        verdict(
            "criterion 10b (resolved budget closes time-integrated to 1e-4)",
            ok,
            f"dE_ell {delta_e:+.3e} vs integral {integral:+.3e}, rel {rel:.2e}, "
            f"runtime {elapsed:.0f}s",
        )
        assert ok
