import numpy as np
import pytest

from cascadelab.diagnostics import (
    FluxProfile,
    energy_spectrum,
    flux_profile,
    four_fifths_check,
    four_fifths_coefficient,
    integral_scale,
    scale_report,
    structure_function_2,
    structure_function_3L,
    turnover_time,
)
from cascadelab.filters import FilterKernel
from cascadelab.grid import (
    Grid,
    forward_transform,
    inverse_transform,
    leray_project,
    spectral_mean_sq,
)
from cascadelab.solver import (
    FlowState,
    random_spectrum_velocity,
    shear_flow_2d,
    single_mode_velocity,
    taylor_green_2d,
)


class TestEnergySpectrum:
    def test_single_mode(self):
        grid = Grid(2, 64)
        a = 1.3
        uh = single_mode_velocity(grid, (3, 0), a)
        sp = energy_spectrum(grid, uh)
        assert abs(sp.energy[3] - a**2 / 4) < 1e-13
        others = sp.energy.copy()
        others[3] = 0.0
        assert np.max(np.abs(others)) < 1e-15

    def test_parseval_closure(self):
        for dim, n in ((2, 64), (3, 24)):
            grid = Grid(dim, n)
            uh = random_spectrum_velocity(grid, 0.7, 4.0, seed=1)
            sp = energy_spectrum(grid, uh)
            ke = 0.5 * spectral_mean_sq(grid, uh)
            assert abs(sp.total() - ke) < 1e-10 * ke


class TestStructureFunction2:
    def test_constant_zero(self):
        grid = Grid(2, 32)
        uh = forward_transform(grid, np.stack([np.full(grid.shape, 2.0)] * 2))
        vals = structure_function_2(grid, uh, [(0.5, 0.3)])
        assert abs(vals[0]) < 1e-13

    def test_sine_half_period(self):
        grid = Grid(2, 32)
        u = np.stack([np.sin(grid.x[0]) + 0 * grid.x[1], np.zeros(grid.shape)])
        uh = forward_transform(grid, u)
        vals = structure_function_2(grid, uh, [(np.pi, 0.0)])
        assert abs(vals[0] - 2.0) < 1e-12  # mean |2 sin x|^2 = 2

    def test_brute_force_oracle_16(self):
        grid = Grid(2, 16)
        rng = np.random.default_rng(5)
        uh = forward_transform(grid, rng.standard_normal((2,) + grid.shape))
        u = inverse_transform(grid, uh)
        shift = (3, 5)  # grid-aligned so the oracle is a double loop with roll
        r = (shift[0] * grid.h, shift[1] * grid.h)
        val = structure_function_2(grid, uh, [r])[0]
        acc = 0.0
        for i in range(grid.n):
            for j in range(grid.n):
                du = (
                    u[:, (i + shift[0]) % grid.n, (j + shift[1]) % grid.n]
                    - u[:, i, j]
                )
                acc += float(np.sum(du**2))
        oracle = acc / grid.n**2
        assert abs(val - oracle) < 1e-12 * max(1.0, oracle)

    def test_nonnegative_and_zero_at_origin(self):
        grid = Grid(2, 32)
        uh = random_spectrum_velocity(grid, 0.5, 4.0, seed=6)
        rs = [(0.0, 0.0), (0.2, 0.1), (1.0, -0.4)]
        vals = structure_function_2(grid, uh, rs)
        assert abs(vals[0]) < 1e-14
        assert np.all(vals >= -1e-14)


class TestStructureFunction3L:
    def test_constant_zero(self):
        grid = Grid(2, 32)
        uh = forward_transform(grid, np.stack([np.full(grid.shape, 1.0)] * 2))
        assert abs(structure_function_3L(grid, uh, [0.5])[0]) < 1e-14

    def test_mirror_symmetric_zero(self):
        # u(-x) = -u(x) makes the cubed increment integrate to zero
        grid = Grid(2, 64)
        uh = taylor_green_2d(grid)
        assert abs(structure_function_3L(grid, uh, [0.5])[0]) < 1e-14

    def test_refined_direction_oracle(self):
        grid = Grid(2, 48)
        uh = random_spectrum_velocity(grid, 0.5, 4.0, seed=7)
        coarse = structure_function_3L(grid, uh, [0.6], n_dirs=32)[0]
        dense = structure_function_3L(grid, uh, [0.6], n_dirs=320)[0]
        assert abs(coarse - dense) <= 0.01 * abs(dense)


class TestFourFifths:
    def test_coefficients(self):
        assert four_fifths_coefficient(3) == pytest.approx(-0.8, abs=0)
        assert four_fifths_coefficient(2) == pytest.approx(-1.5, abs=0)

    def test_smooth_field_indeterminate_below_floor(self):
        grid = Grid(3, 24)
        uh = random_spectrum_velocity(grid, 1e-18, 2.0, seed=8)
        tab = four_fifths_check(grid, uh, [0.8], n_dirs=16)
        assert tab["indeterminate"][0]
        assert np.isnan(tab["ratio"][0])


class TestFluxProfile:
    def test_smooth_2d_flux_negligible(self):
        # sharply banded 2D data, ell far below the smallest active scale
        grid = Grid(2, 128)
        rng = np.random.default_rng(9)
        uh = leray_project(
            grid, forward_transform(grid, rng.standard_normal((2,) + grid.shape))
        )
        uh = uh * (grid.k_mag <= 2.0)
        e = 0.5 * spectral_mean_sq(grid, uh)
        uh *= np.sqrt(0.5 / e)
        state = FlowState(grid=grid, uh=uh, nu=0.01)
        prof = flux_profile(state, [4 * grid.h, 8 * grid.h])
        assert np.all(np.abs(prof.pi_means) < 1e-8)
        assert np.all(np.isfinite(prof.tau_ells))

    def test_increasing_ells_enforced(self):
        with pytest.raises(ValueError):
            FluxProfile(
                ells=np.array([0.2, 0.1]),
                pi_means=np.zeros(2),
                dissipation=0.0,
                input_rate=0.0,
            )

    def test_turnover_time_shear(self):
        grid = Grid(2, 64)
        uh = forward_transform(
            grid, np.stack([np.sin(grid.x[1]) + 0 * grid.x[0], np.zeros(grid.shape)])
        )
        tau = turnover_time(grid, uh, FilterKernel("bump", 0.5))
        assert np.isfinite(tau) and tau > 0


class TestScaleReport:
    def test_formula_identity(self):
        grid = Grid(2, 32)
        uh = forward_transform(
            grid,
            np.stack(
                [np.sqrt(2.0) * np.sin(grid.x[1]) + 0 * grid.x[0], np.zeros(grid.shape)]
            ),
        )
        state = FlowState(grid=grid, uh=uh, nu=1.0)  # eps = nu <|grad u|^2> = 1
        rep = scale_report(state)
        assert abs(rep["epsilon"] - 1.0) < 1e-12
        assert abs(rep["ell_nu"] - 1.0) < 1e-12
        assert abs(rep["tau_eta"] - 1.0) < 1e-12

    def test_inviscid_unavailable(self):
        grid = Grid(2, 32)
        state = FlowState(grid=grid, uh=taylor_green_2d(grid), nu=0.0)
        rep = scale_report(state)
        assert rep["ell_nu"] is None and rep["tau_eta"] is None

    def test_ordering_warnings(self):
        grid = Grid(2, 64)
        state = FlowState(
            grid=grid, uh=random_spectrum_velocity(grid, 0.5, 3.0, seed=10), nu=0.01
        )
        with pytest.warns(UserWarning):
            rep = scale_report(state, ells=[2.5 * grid.h, 4.0])  # 4.0 > L/2 likely
        assert rep["warnings"]

    def test_integral_scale_single_mode(self):
        grid = Grid(2, 64)
        uh = single_mode_velocity(grid, (4, 0), 1.0)
        sp = energy_spectrum(grid, uh)
        assert abs(integral_scale(sp) - 2 * np.pi / 4) < 1e-12
