"""Configuration-driven experiment runner.

Every solver and study is exposed as a subcommand reading a flat ``key=value``
config file (dotted prefixes act as sections) plus repeatable ``--set``
overrides. Each run writes ``manifest.txt`` (the fully resolved config, itself
a valid config file for byte-identical re-runs), ``report.txt`` with headline
metrics, and the data CSVs of the module interfaces. All numeric output uses
17 significant digits and no timestamps, so identical configs produce
identical bytes. Runs are headless and offline.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .applications import CrowdParams, WealthParams, build_crowd_model, build_wealth_model
from .brs import MpcConfig
from .fokker_planck import FpkConfig, NumericalError, solve_fpk
from .measures import (
    Grid,
    format_float,
    moments,
    write_csv,
    write_empirical_csv,
)
from .mfg import PicardConfig, compare_brs_mfg, mpc_reduction_check, solve_mfg_picard
from .model import ModelSpec
from .particle_sim import SimConfig, propagation_of_chaos_study, simulate_brs_nplayer
from .presets import lq_model, mean_coupling_model, ou_model

__all__ = ["ConfigError", "RunConfig", "run", "main"]

ENV_OUT = "BRSMFG_OUT"


class ConfigError(Exception):
    """Bad config file, unknown key, or unusable value."""


_COMMON = {
    "model.preset": "ou",
    "model.T": "auto",
    "model.sigma": "1.0",
    "model.alpha": "1.0",
    "model.init_var": "0.25",
    "model.coupling_strength": "1.0",
    "run.workers": "1",
    "run.out": "",
}

_WEALTH_MODEL = {
    "wealth.kappa": "0.05",
    "wealth.psi_width": "1.0",
    "wealth.z_min": "1e-6",
    "wealth.y_std": "1.0",
    "wealth.z_log_mean": "0.0",
    "wealth.z_log_std": "0.3",
}

_CROWD_MODEL = {
    "crowd.lam": "1.0",
    "crowd.sigma": "0.2",
    "crowd.bandwidth": "0.2",
    "crowd.psi_weight": "1.0",
    "crowd.xmin": "-2.0",
    "crowd.xmax": "2.0",
    "crowd.ymin": "-2.0",
    "crowd.ymax": "2.0",
    "crowd.center1": "-0.5,0.0",
    "crowd.center2": "0.5,0.0",
    "crowd.target1": "1.0,0.0",
    "crowd.target2": "-1.0,0.0",
    "crowd.ic_std": "0.5",
}

_SIM = {
    "sim.dt": "0.001",
    "sim.t_final": "auto",
    "sim.n_particles": "1000",
    "sim.seed": "0",
    "sim.record_every": "100",
    "sim.coupling": "full_empirical",
    "sim.use_alpha_dot": "true",
}

_FPK_1D = {
    "fpk.xmin": "-6.0",
    "fpk.xmax": "6.0",
    "fpk.cells": "400",
    "fpk.t_final": "auto",
    "fpk.cfl_safety": "0.9",
    "fpk.n_records": "8",
    "fpk.boundary": "no_flux",
}

_MFG = {
    "mfg.n_t": "16",
    "mfg.max_iters": "50",
    "mfg.damping": "0.5",
    "mfg.tol": "1e-4",
}

DEFAULTS: dict[str, dict[str, str]] = {
    "simulate": {**_COMMON, **_WEALTH_MODEL, **_CROWD_MODEL, **_SIM},
    "fpk": {**_COMMON, **_FPK_1D},
    "mfg": {**_COMMON, **_FPK_1D, **_MFG},
    "compare": {**_COMMON, **_FPK_1D, **_MFG},
    "chaos-study": {
        **_COMMON,
        **_SIM,
        **_FPK_1D,
        "chaos.n_values": "250,1000,4000",
        "chaos.n_seeds": "20",
        "chaos.seed0": "0",
    },
    "mpc-order": {**_COMMON, **_FPK_1D, "mpc.dt_values": "0.1,0.05,0.025,0.0125"},
    "wealth": {
        **_COMMON,
        **_WEALTH_MODEL,
        "wealth.ymin": "-3.0",
        "wealth.ymax": "3.0",
        "wealth.ycells": "40",
        "wealth.zmax": "4.0",
        "wealth.zcells": "40",
        "wealth.t_final": "0.25",
        "wealth.n_records": "4",
        "wealth.cfl_safety": "0.9",
    },
    "crowd": {
        **_COMMON,
        **_CROWD_MODEL,
        "crowd.cells": "48",
        "crowd.t_final": "auto",
        "crowd.n_records": "4",
        "crowd.cfl_safety": "0.9",
    },
}


class RunConfig:
    """Resolved flat configuration: canonical string values keyed by dotted names."""

    def __init__(self, values: dict[str, str]):
        self.values = dict(values)

    def str_(self, key: str) -> str:
        return self.values[key]

    def float_(self, key: str) -> float:
        try:
            return float(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"key {key}: expected a number, got {self.values[key]!r}") from exc

    def auto_float(self, key: str) -> float | None:
        if self.values[key].strip().lower() == "auto":
            return None
        return self.float_(key)

    def int_(self, key: str) -> int:
        try:
            return int(self.values[key])
        except ValueError as exc:
            raise ConfigError(f"key {key}: expected an integer, got {self.values[key]!r}") from exc

    def bool_(self, key: str) -> bool:
        v = self.values[key].strip().lower()
        if v in ("true", "1", "yes"):
            return True
        if v in ("false", "0", "no"):
            return False
        raise ConfigError(f"key {key}: expected true/false, got {self.values[key]!r}")

    def floats(self, key: str) -> list[float]:
        try:
            return [float(tok) for tok in self.values[key].split(",") if tok.strip()]
        except ValueError as exc:
            raise ConfigError(f"key {key}: expected comma-separated numbers") from exc

    def ints(self, key: str) -> list[int]:
        try:
            return [int(tok) for tok in self.values[key].split(",") if tok.strip()]
        except ValueError as exc:
            raise ConfigError(f"key {key}: expected comma-separated integers") from exc

    def lines(self) -> list[str]:
        return [f"{k}={self.values[k]}" for k in sorted(self.values)]


def _parse_config_text(text: str, source: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{ln}: expected key=value, got {raw!r}")
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def resolve_config(subcommand: str, config_path: str | None, overrides: list[str]) -> RunConfig:
    defaults = DEFAULTS[subcommand]
    values = dict(defaults)
    if config_path is not None:
        path = Path(config_path)
        if not path.exists():
            raise ConfigError(f"config file not found: {config_path}")
        file_kv = _parse_config_text(path.read_text(), str(path))
        for key, val in file_kv.items():
            if key not in defaults:
                raise ConfigError(f"unknown config key: {key}")
            values[key] = val
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, val = item.partition("=")
        key = key.strip()
        if key not in defaults:
            raise ConfigError(f"unknown config key: {key}")
        values[key] = val.strip()
    return RunConfig(values)


def _build_model(cfg: RunConfig) -> ModelSpec:
    preset = cfg.str_("model.preset")
    T = cfg.auto_float("model.T")
    sigma = cfg.float_("model.sigma")
    alpha = cfg.float_("model.alpha")
    init_var = cfg.float_("model.init_var")
    if preset == "ou":
        return ou_model(T=T if T is not None else 8.0, sigma=sigma, init_var=init_var, alpha=alpha)
    if preset == "lq":
        return lq_model(T=T if T is not None else 1.0, sigma=sigma, init_var=init_var, alpha=alpha)
    if preset == "mean_coupling":
        return mean_coupling_model(
            T=T if T is not None else 1.0,
            sigma=sigma,
            strength=cfg.float_("model.coupling_strength"),
            init_var=init_var,
            alpha=alpha,
        )
    if preset == "wealth":
        model = build_wealth_model(_wealth_params(cfg))
        return model.with_horizon(T) if T is not None else model
    if preset == "crowd":
        return build_crowd_model(_crowd_params(cfg, T))
    raise ConfigError(f"unknown model preset {preset!r}")


def _wealth_params(cfg: RunConfig) -> WealthParams:
    return WealthParams(
        kappa=cfg.float_("wealth.kappa"),
        psi_width=cfg.float_("wealth.psi_width"),
        z_min=cfg.float_("wealth.z_min"),
        y_std=cfg.float_("wealth.y_std"),
        z_log_mean=cfg.float_("wealth.z_log_mean"),
        z_log_std=cfg.float_("wealth.z_log_std"),
    )


def _crowd_params(cfg: RunConfig, T: float | None) -> CrowdParams:
    def pair(key):
        vals = cfg.floats(key)
        if len(vals) != 2:
            raise ConfigError(f"key {key}: expected two comma-separated numbers")
        return (vals[0], vals[1])

    s = cfg.float_("crowd.sigma")
    return CrowdParams(
        lam=cfg.float_("crowd.lam"),
        sigma=(s, s),
        domain=(
            (cfg.float_("crowd.xmin"), cfg.float_("crowd.xmax")),
            (cfg.float_("crowd.ymin"), cfg.float_("crowd.ymax")),
        ),
        kde_bandwidth=cfg.float_("crowd.bandwidth"),
        horizon=T if T is not None else 0.5,
        psi_weight=cfg.float_("crowd.psi_weight"),
        targets=(pair("crowd.target1"), pair("crowd.target2")),
        ic_centers=(pair("crowd.center1"), pair("crowd.center2")),
        ic_std=cfg.float_("crowd.ic_std"),
    )


def _grid_1d(cfg: RunConfig) -> Grid:
    return Grid(
        mins=(cfg.float_("fpk.xmin"),),
        maxs=(cfg.float_("fpk.xmax"),),
        cells=(cfg.int_("fpk.cells"),),
    )


def _record_times(t0: float, t_final: float, n_records: int) -> tuple[float, ...]:
    return tuple(np.linspace(t0, t_final, n_records + 1))


def _write_manifest(out: Path, subcommand: str, cfg: RunConfig) -> None:
    lines = [f"# brsmfg {subcommand} manifest", f"# version={__version__}"]
    lines += cfg.lines()
    (out / "manifest.txt").write_text("\n".join(lines) + "\n")


def _write_report(out: Path, entries: list[tuple[str, object]]) -> None:
    lines = []
    for key, val in entries:
        if isinstance(val, str):
            lines.append(f"{key}={val}")
        elif isinstance(val, (int, np.integer)):
            lines.append(f"{key}={int(val)}")
        else:
            lines.append(f"{key}={format_float(val)}")
    (out / "report.txt").write_text("\n".join(lines) + "\n")


def _fpk_report_entries(path) -> list[tuple[str, object]]:
    rep = path.report
    return [
        ("mass_drift_max", rep["mass_drift_max"]),
        ("min_density", rep["min_density"]),
        ("boundary_mass_max", rep["boundary_mass_max"]),
        ("boundary_mass_flag", "yes" if rep["boundary_mass_flag"] else "no"),
        ("n_steps", int(rep["n_steps"])),
    ]


# ---------------------------------------------------------------------------
# subcommand implementations, each returning (exit_code, report entries)
# ---------------------------------------------------------------------------


def _run_simulate(cfg: RunConfig, out: Path) -> int:
    model = _build_model(cfg)
    t_final = cfg.auto_float("sim.t_final")
    sim = SimConfig(
        dt=cfg.float_("sim.dt"),
        t_final=t_final if t_final is not None else model.T,
        n_particles=cfg.int_("sim.n_particles"),
        seed=cfg.int_("sim.seed"),
        record_every=cfg.int_("sim.record_every"),
        coupling=cfg.str_("sim.coupling"),
        workers=cfg.int_("run.workers"),
    )
    rec = simulate_brs_nplayer(model, sim, MpcConfig(dt=sim.dt, use_alpha_dot=cfg.bool_("sim.use_alpha_dot")))
    final = rec.final()
    write_empirical_csv(out / "particles_final.csv", [final.empirical(p) for p in range(model.n_populations)])
    rows = []
    for k, t in enumerate(rec.times):
        snap = rec.snapshots[k]
        for pop in range(model.n_populations):
            mom = moments(snap.empirical(pop), order=2)
            for ax in range(model.d):
                rows.append([t, f"pop{pop}_mean_x{ax}", mom.mean[ax]])
                rows.append([t, f"pop{pop}_var_x{ax}", mom.variance[ax]])
    write_csv(out / "metrics.csv", ["t", "metric_name", "value"], rows)
    entries: list[tuple[str, object]] = [("t_final", rec.times[-1]), ("n_steps", len(rec.times) - 1)]
    for pop in range(model.n_populations):
        mom = moments(final.empirical(pop), order=2)
        for ax in range(model.d):
            entries.append((f"pop{pop}_terminal_mean_x{ax}", mom.mean[ax]))
            entries.append((f"pop{pop}_terminal_var_x{ax}", mom.variance[ax]))
    _write_report(out, entries)
    return 0


def _fpk_1d_solve(cfg: RunConfig, model: ModelSpec):
    if model.d != 1:
        raise ConfigError("the fpk subcommand is one-dimensional; use wealth/crowd")
    grid = _grid_1d(cfg)
    t_final = cfg.auto_float("fpk.t_final")
    t_final = t_final if t_final is not None else model.T
    fpk_cfg = FpkConfig(
        t_final=t_final,
        cfl_safety=cfg.float_("fpk.cfl_safety"),
        boundary=cfg.str_("fpk.boundary"),
        record_times=_record_times(0.0, t_final, cfg.int_("fpk.n_records")),
    )
    m0 = model.population(0).initial_law.grid_density(grid)
    return grid, solve_fpk(model, m0, fpk_cfg)


def _run_fpk(cfg: RunConfig, out: Path) -> int:
    model = _build_model(cfg)
    grid, path = _fpk_1d_solve(cfg, model)
    path.write_csv(out / "density.csv", preamble=[f"preset={cfg.str_('model.preset')}"])
    final = path.final(0)
    mom = moments(final, order=2)
    entries = [
        ("t_final", path.times[-1]),
        ("terminal_mean", mom.mean[0]),
        ("terminal_variance", mom.variance[0]),
    ] + _fpk_report_entries(path)
    _write_report(out, entries)
    return 0


def _run_mfg(cfg: RunConfig, out: Path) -> int:
    model = _build_model(cfg)
    if model.d != 1:
        raise ConfigError("the mfg subcommand is one-dimensional")
    grid = _grid_1d(cfg)
    picard = PicardConfig(
        max_iters=cfg.int_("mfg.max_iters"),
        damping=cfg.float_("mfg.damping"),
        tol=cfg.float_("mfg.tol"),
    )
    m0 = model.population(0).initial_law.grid_density(grid)
    sol = solve_mfg_picard(model, m0, grid, cfg.int_("mfg.n_t"), cfg=picard)
    sol.value.write_csv(out / "values.csv")
    sol.density_path.write_csv(out / "density.csv")
    sol.write_iteration_csv(out / "iterations.csv")
    mom = moments(sol.density_path.final(0), order=2)
    entries = [
        ("converged", "yes" if sol.converged else "no"),
        ("n_iterations", sol.n_iterations),
        ("last_residual", sol.residuals[-1]),
        ("terminal_variance", mom.variance[0]),
    ] + _fpk_report_entries(sol.density_path)
    _write_report(out, entries)
    return 0 if sol.converged else 4


def _run_compare(cfg: RunConfig, out: Path) -> int:
    model = _build_model(cfg)
    if model.d != 1:
        raise ConfigError("the compare subcommand is one-dimensional")
    grid = _grid_1d(cfg)
    picard = PicardConfig(
        max_iters=cfg.int_("mfg.max_iters"),
        damping=cfg.float_("mfg.damping"),
        tol=cfg.float_("mfg.tol"),
    )
    m0 = model.population(0).initial_law.grid_density(grid)
    res = compare_brs_mfg(model, m0, grid, cfg.int_("mfg.n_t"), cfg=picard)
    res.write_csv(out / "compare.csv")
    res.brs_path.write_csv(out / "density_brs.csv")
    res.mfg.density_path.write_csv(out / "density_mfg.csv")
    entries = [
        ("max_w1", res.max_w1),
        ("terminal_w1", res.w1[-1]),
        ("mfg_converged", "yes" if res.mfg.converged else "no"),
    ]
    _write_report(out, entries)
    return 0 if res.mfg.converged else 4


def _run_chaos(cfg: RunConfig, out: Path) -> int:
    model = _build_model(cfg)
    if model.d != 1:
        raise ConfigError("the chaos-study subcommand is one-dimensional")
    t_final = cfg.auto_float("sim.t_final")
    t_final = t_final if t_final is not None else model.T
    grid = _grid_1d(cfg)
    fpk_cfg = FpkConfig(
        t_final=t_final,
        cfl_safety=cfg.float_("fpk.cfl_safety"),
        record_times=_record_times(0.0, t_final, cfg.int_("fpk.n_records")),
    )
    m0 = model.population(0).initial_law.grid_density(grid)
    reference = solve_fpk(model, m0, fpk_cfg)
    sim = SimConfig(
        dt=cfg.float_("sim.dt"),
        t_final=t_final,
        n_particles=2,
        seed=0,
        record_every=max(cfg.int_("sim.record_every"), 1),
        coupling=cfg.str_("sim.coupling"),
        workers=cfg.int_("run.workers"),
    )
    seed0 = cfg.int_("chaos.seed0")
    seeds = [seed0 + k for k in range(cfg.int_("chaos.n_seeds"))]
    rows = propagation_of_chaos_study(model, sim, cfg.ints("chaos.n_values"), reference, seeds)
    write_csv(
        out / "chaos.csv",
        ["n_particles", "mean_w1", "std_w1"],
        [[r.n_particles, r.mean_w1, r.std_w1] for r in rows],
    )
    entries: list[tuple[str, object]] = [("n_seeds", len(seeds))]
    for r in rows:
        entries.append((f"mean_w1_n{r.n_particles}", r.mean_w1))
    if len(rows) >= 2 and rows[-1].mean_w1 > 0:
        entries.append(("w1_ratio_first_last", rows[0].mean_w1 / rows[-1].mean_w1))
    decreasing = all(a.mean_w1 > b.mean_w1 for a, b in zip(rows, rows[1:]))
    entries.append(("strictly_decreasing", "yes" if decreasing else "no"))
    _write_report(out, entries + _fpk_report_entries(reference))
    return 0


def _run_mpc_order(cfg: RunConfig, out: Path) -> int:
    model = _build_model(cfg)
    if model.d != 1:
        raise ConfigError("the mpc-order subcommand is one-dimensional")
    grid = _grid_1d(cfg)
    res = mpc_reduction_check(model, grid, cfg.floats("mpc.dt_values"))
    res.write_csv(out / "orders.csv")
    entries: list[tuple[str, object]] = [("fitted_order", res.fitted_order)]
    for dt, err in res.rows:
        entries.append((f"sup_error_dt_{format_float(dt)}", err))
    _write_report(out, entries)
    return 0


def _run_wealth(cfg: RunConfig, out: Path) -> int:
    params = _wealth_params(cfg)
    model = build_wealth_model(params)
    grid = Grid(
        mins=(cfg.float_("wealth.ymin"), params.z_min),
        maxs=(cfg.float_("wealth.ymax"), cfg.float_("wealth.zmax")),
        cells=(cfg.int_("wealth.ycells"), cfg.int_("wealth.zcells")),
    )
    t_final = cfg.float_("wealth.t_final")
    fpk_cfg = FpkConfig(
        t_final=t_final,
        cfl_safety=cfg.float_("wealth.cfl_safety"),
        record_times=_record_times(0.0, t_final, cfg.int_("wealth.n_records")),
    )
    m0 = model.population(0).initial_law.grid_density(grid)
    path = solve_fpk(model, m0, fpk_cfg)
    path.write_csv(out / "density.csv", preamble=["preset=wealth"])
    mom = moments(path.final(0), order=2)
    entries = [
        ("t_final", path.times[-1]),
        ("terminal_mean_y", mom.mean[0]),
        ("terminal_mean_z", mom.mean[1]),
        ("terminal_var_z", mom.variance[1]),
    ] + _fpk_report_entries(path)
    _write_report(out, entries)
    return 0


def _run_crowd(cfg: RunConfig, out: Path) -> int:
    T = cfg.auto_float("crowd.t_final")
    params = _crowd_params(cfg, T)
    model = build_crowd_model(params)
    nc = cfg.int_("crowd.cells")
    grid = Grid(
        mins=(params.domain[0][0], params.domain[1][0]),
        maxs=(params.domain[0][1], params.domain[1][1]),
        cells=(nc, nc),
    )
    fpk_cfg = FpkConfig(
        t_final=model.T,
        cfl_safety=cfg.float_("crowd.cfl_safety"),
        record_times=_record_times(0.0, model.T, cfg.int_("crowd.n_records")),
    )
    m0 = tuple(model.population(p).initial_law.grid_density(grid) for p in range(2))
    path = solve_fpk(model, m0, fpk_cfg)
    path.write_csv(out / "density.csv", preamble=["preset=crowd"])
    vol = grid.cell_volume
    overlap0 = float(np.minimum(path.values[0, 0], path.values[0, 1]).sum() * vol)
    overlap1 = float(np.minimum(path.values[-1, 0], path.values[-1, 1]).sum() * vol)
    entries = [
        ("t_final", path.times[-1]),
        ("overlap_initial", overlap0),
        ("overlap_final", overlap1),
    ] + _fpk_report_entries(path)
    _write_report(out, entries)
    return 0


_RUNNERS = {
    "simulate": _run_simulate,
    "fpk": _run_fpk,
    "mfg": _run_mfg,
    "compare": _run_compare,
    "chaos-study": _run_chaos,
    "mpc-order": _run_mpc_order,
    "wealth": _run_wealth,
    "crowd": _run_crowd,
}


def run(subcommand: str, config_path: str | None, overrides: list[str], out_dir: str | None, workers: int | None = None) -> int:
    """Execute one study; returns the process exit status.

    0 = success, 2 = config error, 3 = numerical failure,
    4 = completed with a non-convergence warning.
    """
    if subcommand not in _RUNNERS:
        raise ConfigError(f"unknown subcommand {subcommand!r}")
    cfg = resolve_config(subcommand, config_path, list(overrides))
    if workers is not None:
        cfg.values["run.workers"] = str(workers)
    resolved_out = out_dir or cfg.str_("run.out") or os.environ.get(ENV_OUT) or "runs"
    out = Path(resolved_out)
    out.mkdir(parents=True, exist_ok=True)
    _write_manifest(out, subcommand, cfg)
    return _RUNNERS[subcommand](cfg, out)


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="brsmfg",
        description="Best-reply-strategy and mean-field-game experiment runner",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in _RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override one config key (repeatable)",
        )
        p.add_argument("--out", default=None, help=f"output directory (default ${ENV_OUT} or ./runs)")
        p.add_argument("--workers", type=int, default=None, help="intra-run worker cap")
    args = parser.parse_args(argv)
    try:
        return run(args.subcommand, args.config, args.overrides, args.out, args.workers)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
