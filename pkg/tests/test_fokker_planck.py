"""Finite-volume continuity solver: conservation, positivity, benchmarks."""

import numpy as np
import pytest
from scipy.special import erf

from _helpers import quadratic_cost, scalar_model

from brsmfg.fokker_planck import FpkConfig, NumericalError, fpk_step, solve_fpk, stable_dt
from brsmfg.measures import Grid, GridDensity, wasserstein_1d
from brsmfg.particle_sim import SimConfig, simulate_brs_nplayer
from brsmfg.presets import mean_coupling_model, ou_model


def gaussian_field(grid: Grid, std: float, mean: float = 0.0) -> GridDensity:
    edges = grid.edges(0)
    cdf = 0.5 * (1 + erf((edges - mean) / (std * np.sqrt(2))))
    vals = np.diff(cdf) / grid.widths[0]
    vals /= vals.sum() * grid.cell_volume
    return GridDensity(grid, vals)


GRID = Grid((-6.0,), (6.0,), (400,))


class TestPureCases:
    def test_frozen_without_dynamics(self):
        model = scalar_model(sigma=0.0)
        m0 = gaussian_field(GRID, 0.5)
        path = solve_fpk(model, m0, FpkConfig(t_final=0.5, record_times=(0.0, 0.5)))
        assert np.array_equal(path.values[-1, 0], m0.values)

    def test_heat_kernel_variance_growth(self):
        model = scalar_model(sigma=1.0)  # no drift: pure diffusion
        m0 = gaussian_field(GRID, 0.5)
        path = solve_fpk(model, m0, FpkConfig(t_final=0.5, record_times=(0.0, 0.5)))
        var = path.final(0).variance()[0]
        assert var == pytest.approx(0.75, rel=0.02)

    def test_ou_terminal_variance(self):
        model = ou_model(T=8.0)
        m0 = model.population(0).initial_law.grid_density(GRID)
        path = solve_fpk(model, m0, FpkConfig(t_final=8.0, record_times=(0.0, 8.0)))
        assert path.final(0).variance()[0] == pytest.approx(0.5, rel=0.02)

    def test_ou_density_matches_analytic_in_l1(self):
        model = ou_model(T=8.0)
        m0 = model.population(0).initial_law.grid_density(GRID)
        path = solve_fpk(model, m0, FpkConfig(t_final=8.0, record_times=(0.0, 8.0)))
        exact = gaussian_field(GRID, np.sqrt(0.5))
        l1 = np.abs(path.values[-1, 0] - exact.values).sum() * GRID.cell_volume
        assert l1 <= 2e-2

    def test_symmetric_interaction_conserves_the_mean(self):
        model = mean_coupling_model(T=1.0)
        m0 = gaussian_field(GRID, 0.5)
        path = solve_fpk(model, m0, FpkConfig(t_final=1.0, record_times=(0.0, 0.5, 1.0)))
        for k in range(len(path.times)):
            assert abs(path.density(k, 0).mean()[0]) <= 1e-10


class TestConservation:
    def test_mass_and_positivity_under_no_flux(self):
        model = ou_model(T=8.0)
        m0 = model.population(0).initial_law.grid_density(GRID)
        path = solve_fpk(model, m0, FpkConfig(t_final=8.0, record_times=tuple(np.linspace(0, 8, 9))))
        assert path.report["mass_drift_max"] <= 1e-12
        assert path.report["min_density"] >= -1e-13
        masses = path.masses()
        assert np.abs(masses - 1.0).max() <= 1e-12

    def test_absorbing_boundary_loses_mass_monotonically(self):
        model = ou_model(T=1.0)
        grid = Grid((-1.0,), (1.0,), (64,))  # tight box: Gaussian leaks out
        m0 = gaussian_field(grid, 0.5)
        path = solve_fpk(
            model, m0, FpkConfig(t_final=1.0, boundary="absorbing", record_times=tuple(np.linspace(0, 1, 5)))
        )
        masses = path.masses()[:, 0]
        assert masses[-1] < masses[0]
        assert np.all(np.diff(masses) <= 1e-14)

    def test_boundary_mass_flag_raised_on_tight_domain(self):
        model = scalar_model(sigma=1.0)
        grid = Grid((-1.5,), (1.5,), (48,))
        m0 = gaussian_field(grid, 0.5)
        path = solve_fpk(model, m0, FpkConfig(t_final=1.0, record_times=(0.0, 1.0)))
        assert path.report["boundary_mass_flag"] == 1.0


class TestStepContract:
    def test_cfl_violation_raises(self):
        model = ou_model(T=1.0)
        m0 = gaussian_field(GRID, 0.5)
        bound = stable_dt(model, (m0,), 0.0)
        with pytest.raises(NumericalError, match="CFL violation"):
            fpk_step(model, (m0,), 0.0, dt=3.0 * bound)

    def test_stable_dt_satisfies_componentwise_bound(self):
        model = ou_model(T=1.0)
        m0 = gaussian_field(GRID, 0.5)
        bound = stable_dt(model, (m0,), 0.0)
        dx = GRID.widths[0]
        max_a = 6.0  # |drift| on [-6, 6] for the quadratic cost
        assert bound <= min(dx / max_a, dx**2 / 1.0) + 1e-15

    def test_single_step_preserves_mass(self):
        model = ou_model(T=1.0)
        m0 = gaussian_field(GRID, 0.5)
        dt = 0.5 * stable_dt(model, (m0,), 0.0)
        (out,) = fpk_step(model, (m0,), 0.0, dt)
        assert out.mass == pytest.approx(m0.mass, abs=1e-13)

    def test_min_cells_enforced(self):
        model = ou_model(T=1.0)
        grid = Grid((-6.0,), (6.0,), (4,))
        m0 = GridDensity(grid, np.full(4, 1.0 / 12.0))
        with pytest.raises(ValueError, match="cells"):
            solve_fpk(model, m0, FpkConfig(t_final=0.1))


class TestAccuracy:
    def test_first_order_convergence_on_the_advective_benchmark(self):
        # sigma = 0 keeps the flux in its donor-cell regime; m(t,x) = e^t m0(x e^t)
        model = scalar_model(h=quadratic_cost(), sigma=0.0)
        t_final = 0.5
        errs = []
        for nc in (100, 200):
            grid = Grid((-6.0,), (6.0,), (nc,))
            m0 = gaussian_field(grid, 0.5)
            path = solve_fpk(model, m0, FpkConfig(t_final=t_final, record_times=(0.0, t_final)))
            exact = gaussian_field(grid, 0.5 * np.exp(-t_final))
            errs.append(np.abs(path.values[-1, 0] - exact.values).sum() * grid.cell_volume)
        ratio = errs[0] / errs[1]
        assert 1.6 <= ratio <= 2.4

    def test_particles_and_pde_agree_in_w1(self):
        model = ou_model(T=1.0)
        m0 = model.population(0).initial_law.grid_density(GRID)
        path = solve_fpk(model, m0, FpkConfig(t_final=1.0, record_times=(0.0, 1.0)))
        cfg = SimConfig(dt=0.001, t_final=1.0, n_particles=4000, seed=3, record_every=1000)
        rec = simulate_brs_nplayer(model, cfg)
        w1 = wasserstein_1d(rec.final().empirical(), path.final(0), p=1)
        assert w1 <= 0.05

    def test_record_times_are_hit_exactly(self):
        model = ou_model(T=1.0)
        m0 = gaussian_field(GRID, 0.5)
        times = (0.0, 0.3117, 0.75, 1.0)
        path = solve_fpk(model, m0, FpkConfig(t_final=1.0, record_times=times))
        assert np.array_equal(path.times, np.asarray(times))

    def test_record_every_fallback(self):
        model = ou_model(T=1.0)
        m0 = gaussian_field(GRID, 0.5)
        path = solve_fpk(model, m0, FpkConfig(t_final=0.05, record_every=10))
        assert path.times[0] == 0.0
        assert path.times[-1] == pytest.approx(0.05, abs=1e-12)
        assert np.all(np.diff(path.times) > 0)
