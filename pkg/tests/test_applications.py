"""Wealth and crowd presets: oracles, conservation, symmetry."""

import numpy as np
import pytest

from brsmfg.applications import CrowdParams, WealthParams, build_crowd_model, build_wealth_model
from brsmfg.brs import MpcConfig, brs_control_finite
from brsmfg.fokker_planck import FpkConfig, solve_fpk
from brsmfg.measures import EmpiricalMeasure, Grid
from brsmfg.model import brs_drift
from brsmfg.particle_sim import EnsembleState, SimConfig, simulate_brs_nplayer


def trivial_kernels():
    """psi = 1, xi = 1: the trading drift reduces to wealth-difference averaging."""
    one = lambda r: np.ones_like(np.asarray(r, dtype=float))
    zero = lambda r: np.zeros_like(np.asarray(r, dtype=float))
    return WealthParams(psi=one, psi_prime=zero, xi=one, xi_prime=zero)


class TestWealthModel:
    def test_zmin_must_be_positive(self):
        with pytest.raises(ValueError, match="z_min"):
            build_wealth_model(WealthParams(z_min=0.0)).population(0)

    def test_odd_kernel_rejected(self):
        bad = WealthParams(psi=lambda r: np.asarray(r, dtype=float), psi_prime=lambda r: np.ones_like(np.asarray(r)))
        with pytest.raises(ValueError, match="even"):
            build_wealth_model(bad)

    def test_quadratic_trading_reverts_to_the_mean(self):
        model = build_wealth_model(trivial_kernels())
        rng = np.random.default_rng(4)
        pts = np.column_stack([rng.standard_normal(6), rng.lognormal(0, 0.3, 6)])
        state = EnsembleState(positions=(pts,), t=0.0, seed=0)
        for i in range(6):
            u = brs_control_finite(model, 0, i, state, 0.0, MpcConfig(dt=0.01))
            mean_rest = (pts[:, 1].sum() - pts[i, 1]) / 5
            assert u[1] == pytest.approx(-(pts[i, 1] - mean_rest), abs=1e-12)
            assert u[0] == 0.0

    def test_equal_wealth_means_no_trade(self):
        model = build_wealth_model(WealthParams())
        pts = np.array([[0.0, 1.3], [1.0, 1.3]])
        m = EmpiricalMeasure(pts)
        drift = brs_drift(model, 0, 0.0, pts, m)
        assert np.abs(drift[:, 1]).max() <= 1e-14

    def test_full_empirical_drift_matches_double_loop(self):
        params = WealthParams()
        model = build_wealth_model(params)
        k = params.resolved()
        rng = np.random.default_rng(12)
        n = 100
        pts = np.column_stack([rng.standard_normal(n), rng.lognormal(0, 0.3, n)])
        m = EmpiricalMeasure(pts)
        drift = brs_drift(model, 0, 0.0, pts, m)
        rho = np.array(
            [sum(float(k["psi"](abs(pts[a, 0] - pts[l, 0]))) for l in range(n)) / n for a in range(n)]
        )
        for i in range(0, n, 7):
            acc = 0.0
            for j in range(n):
                acc -= (
                    float(k["xi"](0.5 * (rho[i] + rho[j])))
                    * float(k["psi"](abs(pts[i, 0] - pts[j, 0])))
                    * float(k["phi_prime"](pts[i, 1] - pts[j, 1]))
                ) / n
            assert drift[i, 1] == pytest.approx(acc, abs=1e-12)

    def test_pairwise_antisymmetry_sums_to_zero(self):
        model = build_wealth_model(WealthParams())
        rng = np.random.default_rng(5)
        pts = np.column_stack([rng.standard_normal(100), rng.lognormal(0, 0.3, 100)])
        m = EmpiricalMeasure(pts)
        drift = brs_drift(model, 0, 0.0, pts, m)
        assert abs(drift[:, 1].sum()) / 100 <= 1e-12

    def test_reflection_keeps_wealth_above_floor(self):
        params = WealthParams(kappa=0.6, z_min=0.05, z_log_mean=-2.0, z_log_std=0.8)
        model = build_wealth_model(params)
        cfg = SimConfig(dt=0.01, t_final=0.5, n_particles=400, seed=2, record_every=10)
        rec = simulate_brs_nplayer(model, cfg)
        for snap in rec.snapshots:
            assert snap.positions[0][:, 1].min() >= params.z_min - 1e-12

    def test_pure_diffusion_grid_run_conserves_mass(self):
        # v = 0 and Phi = 0: only the multiplicative wealth diffusion acts
        zerok = WealthParams(
            psi=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
            psi_prime=lambda r: np.zeros_like(np.asarray(r, dtype=float)),
        )
        model = build_wealth_model(zerok)
        grid = Grid((-2.0, zerok.z_min), (2.0, 4.0), (16, 48))
        m0 = model.population(0).initial_law.grid_density(grid)
        path = solve_fpk(model, m0, FpkConfig(t_final=0.25, record_times=(0.0, 0.25)))
        assert path.report["mass_drift_max"] <= 1e-10
        assert path.report["min_density"] >= -1e-13

    def test_coupled_grid_run_conserves_mass(self):
        model = build_wealth_model(WealthParams())
        grid = Grid((-2.0, 1e-6), (2.0, 4.0), (16, 24))
        m0 = model.population(0).initial_law.grid_density(grid)
        path = solve_fpk(model, m0, FpkConfig(t_final=0.1, record_times=(0.0, 0.1)))
        assert path.report["mass_drift_max"] <= 1e-10


CROWD_GRID = Grid((-2.0, -2.0), (2.0, 2.0), (48, 48))


def crowd_initial(model, grid=CROWD_GRID):
    return tuple(model.population(p).initial_law.grid_density(grid) for p in range(2))


class TestCrowdModel:
    def test_negative_aversion_rejected(self):
        with pytest.raises(ValueError, match="lam"):
            build_crowd_model(CrowdParams(lam=-0.5))

    def test_mismatched_grids_rejected(self):
        model = build_crowd_model(CrowdParams())
        g1 = CROWD_GRID
        g2 = Grid((-2.0, -2.0), (2.0, 2.0), (32, 32))
        m1 = model.population(0).initial_law.grid_density(g1)
        m2 = model.population(1).initial_law.grid_density(g2)
        with pytest.raises(ValueError, match="mismatched grids"):
            model.population(0).running_cost.value(np.array([[0.0, 0.0]]), (m1, m2))

    def test_zero_aversion_identical_populations_coincide(self):
        params = CrowdParams(
            lam=0.0,
            ic_centers=((0.0, 0.0), (0.0, 0.0)),
            targets=((1.0, 0.0), (1.0, 0.0)),
            horizon=0.25,
        )
        model = build_crowd_model(params)
        m0 = crowd_initial(model)
        path = solve_fpk(model, m0, FpkConfig(t_final=0.25, record_times=(0.0, 0.125, 0.25)))
        gap = np.abs(path.values[:, 0] - path.values[:, 1]).max()
        assert gap <= 1e-12

    def test_aversion_reduces_overlap(self):
        params = CrowdParams(
            lam=6.0,
            sigma=(0.1, 0.1),
            ic_centers=((-0.4, 0.0), (0.4, 0.0)),
            targets=((-1.2, 0.0), (1.2, 0.0)),
            psi_weight=0.2,
            horizon=0.4,
        )
        model = build_crowd_model(params)
        m0 = crowd_initial(model)
        path = solve_fpk(model, m0, FpkConfig(t_final=0.4, record_times=(0.0, 0.4)))
        vol = CROWD_GRID.cell_volume
        overlap0 = np.minimum(path.values[0, 0], path.values[0, 1]).sum() * vol
        overlap1 = np.minimum(path.values[-1, 0], path.values[-1, 1]).sum() * vol
        assert overlap1 < overlap0

    def test_mirror_symmetry(self):
        base = CrowdParams(
            lam=1.5,
            sigma=(0.15, 0.15),
            ic_centers=((-0.5, 0.25), (0.6, 0.0)),
            targets=((1.0, 0.0), (-0.8, 0.2)),
            horizon=0.3,
        )
        mirrored = CrowdParams(
            lam=1.5,
            sigma=(0.15, 0.15),
            ic_centers=((0.5, 0.25), (-0.6, 0.0)),
            targets=((-1.0, 0.0), (0.8, 0.2)),
            horizon=0.3,
        )
        times = (0.0, 0.15, 0.3)
        pa = solve_fpk(build_crowd_model(base), crowd_initial(build_crowd_model(base)), FpkConfig(t_final=0.3, record_times=times))
        pb = solve_fpk(build_crowd_model(mirrored), crowd_initial(build_crowd_model(mirrored)), FpkConfig(t_final=0.3, record_times=times))
        # reflect the first spatial axis of the mirrored solution
        flipped = pb.values[:, :, ::-1, :]
        l1 = np.abs(pa.values - flipped).sum(axis=(2, 3)).max() * CROWD_GRID.cell_volume
        assert l1 <= 1e-3

    def test_positivity_and_mass(self):
        model = build_crowd_model(CrowdParams(horizon=0.3))
        m0 = crowd_initial(model)
        path = solve_fpk(model, m0, FpkConfig(t_final=0.3, record_times=(0.0, 0.3)))
        assert path.report["min_density"] >= -1e-13
        assert path.report["mass_drift_max"] <= 1e-10

    def test_kde_branch_used_for_particle_measures(self):
        model = build_crowd_model(CrowdParams(lam=0.5, kde_bandwidth=0.3))
        rng = np.random.default_rng(9)
        m1 = EmpiricalMeasure(rng.standard_normal((40, 2)) * 0.5)
        m2 = EmpiricalMeasure(rng.standard_normal((40, 2)) * 0.5 + 0.3)
        x = np.array([0.1, -0.2])
        h = model.population(0).running_cost
        val = float(h.value(x, (m1, m2)))
        grad = h.gradient(x, (m1, m2))
        eps = 1e-6
        for k in range(2):
            dx = np.zeros(2)
            dx[k] = eps
            fd = (float(h.value(x + dx, (m1, m2))) - float(h.value(x - dx, (m1, m2)))) / (2 * eps)
            assert grad[k] == pytest.approx(fd, rel=1e-5, abs=1e-9)
        assert val > 0
