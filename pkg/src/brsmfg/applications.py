"""Application presets: wealth exchange by trading, and two-group crowds.

``build_wealth_model`` assembles the d = 2 trading economy: state (y, z) with
economic configuration y drifting at speed v and wealth z controlled through
the pairwise trading cost

    Phi(x, m) = integral of xi((rho(y) + rho(y'))/2) Psi(|y - y'|) phi(z - z')
                against m(dx'),      rho(y) = integral of Psi(|y - y'|) m(dx'),

whose z-gradient is the trading drift. Only the wealth axis is controlled and
its multiplicative diffusion sqrt(2 kappa) z keeps z positive in law; particle
runs reflect z at a small floor and grid runs place the no-flux wall there.

``build_crowd_model`` assembles two 2-d populations whose running cost is the
own-group density plus ``lam`` times the other group's density (the aversion
weight), with per-group terminal costs; the best-reply drift of group 1 is
then -grad(m1 + lam m2 + Psi1/T).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .measures import (
    EmpiricalMeasure,
    GridDensity,
    density_at,
    density_gradient_at,
)
from .model import (
    ControlPenalty,
    CostFunction,
    DiffusionFunction,
    DriftFunction,
    GaussianMarginal,
    LognormalMarginal,
    ModelSpec,
    PopulationModel,
    product_law,
)

__all__ = ["WealthParams", "CrowdParams", "build_wealth_model", "build_crowd_model"]


def _gaussian_kernel(width: float) -> tuple[Callable, Callable]:
    def psi(r):
        return np.exp(-0.5 * (np.asarray(r) / width) ** 2)

    def psi_prime(r):
        r = np.asarray(r)
        return -(r / width**2) * np.exp(-0.5 * (r / width) ** 2)

    return psi, psi_prime


@dataclass(frozen=True)
class WealthParams:
    """Trading-economy ingredients; kernels default to the exactly-solvable set.

    ``kappa`` is the wealth-diffusion constant (the multiplicative noise is
    sqrt(2 kappa) z), ``v`` the speed of the economic configuration, ``psi``
    the even trading-frequency kernel over configuration distance, ``phi`` the
    even C^2 trading interaction potential over wealth difference, and ``xi``
    the modulation by the average local density. Derivatives are supplied
    alongside each kernel because the best reply differentiates the cost
    analytically.
    """

    kappa: float = 0.05
    v: Callable | None = None
    psi: Callable | None = None
    psi_prime: Callable | None = None
    phi: Callable | None = None
    phi_prime: Callable | None = None
    xi: Callable | None = None
    xi_prime: Callable | None = None
    psi_width: float = 1.0
    z_min: float = 1e-6
    y_std: float = 1.0
    z_log_mean: float = 0.0
    z_log_std: float = 0.3

    def resolved(self) -> dict:
        psi, psi_prime = self.psi, self.psi_prime
        if psi is None:
            psi, psi_prime = _gaussian_kernel(self.psi_width)
        elif psi_prime is None:
            raise ValueError("custom psi requires psi_prime")
        phi = self.phi if self.phi is not None else (lambda z: 0.5 * np.asarray(z) ** 2)
        phi_prime = self.phi_prime if self.phi_prime is not None else (lambda z: np.asarray(z, dtype=float))
        if self.phi is not None and self.phi_prime is None:
            raise ValueError("custom phi requires phi_prime")
        xi = self.xi if self.xi is not None else (lambda r: np.asarray(r, dtype=float))
        xi_prime = self.xi_prime if self.xi_prime is not None else (lambda r: np.ones_like(np.asarray(r, dtype=float)))
        if self.xi is not None and self.xi_prime is None:
            raise ValueError("custom xi requires xi_prime")
        v = self.v if self.v is not None else (lambda x: np.zeros(np.shape(x)[:-1]))
        return dict(psi=psi, psi_prime=psi_prime, phi=phi, phi_prime=phi_prime, xi=xi, xi_prime=xi_prime, v=v)

    def validate(self) -> None:
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        if self.z_min <= 0:
            raise ValueError("z_min must be positive")
        k = self.resolved()
        r = np.linspace(0.1, 3.0, 7)
        if np.abs(k["psi"](r) - k["psi"](-r)).max() > 1e-12:
            raise ValueError("psi must be an even function")
        if np.abs(k["phi"](r) - k["phi"](-r)).max() > 1e-12:
            raise ValueError("phi must be an even function")


def _support(m) -> tuple[np.ndarray, np.ndarray]:
    """(points, integration weights) of a measure for pairwise kernel sums."""
    if isinstance(m, EmpiricalMeasure):
        return m.points, m.weights
    if isinstance(m, GridDensity):
        return m.grid.flat_midpoints(), m.values.reshape(-1) * m.grid.cell_volume
    raise TypeError(f"unsupported measure type {type(m).__name__}")


def build_wealth_model(params: WealthParams) -> ModelSpec:
    """One-population d = 2 trading model (state (y, z), control on z only)."""
    params.validate()
    k = params.resolved()
    psi, psi_prime = k["psi"], k["psi_prime"]
    phi, phi_prime = k["phi"], k["phi_prime"]
    xi, xi_prime = k["xi"], k["xi_prime"]
    v = k["v"]

    def _pairwise(x, m):
        x = np.asarray(x, dtype=float)
        flat = x.reshape(-1, 2)
        pts, w = _support(m)
        yq, zq = flat[:, 0], flat[:, 1]
        yp, zp = pts[:, 0], pts[:, 1]
        dy = yq[:, None] - yp[None, :]
        dz = zq[:, None] - zp[None, :]
        psi_qp = psi(np.abs(dy))
        rho_q = psi_qp @ w
        rho_p = psi(np.abs(yp[:, None] - yp[None, :])) @ w
        arg = 0.5 * (rho_q[:, None] + rho_p[None, :])
        return x.shape, dy, dz, psi_qp, arg, w

    def value(x, m):
        shape, dy, dz, psi_qp, arg, w = _pairwise(x, m)
        out = (xi(arg) * psi_qp * phi(dz)) @ w
        return out.reshape(shape[:-1])

    def gradient(x, m):
        shape, dy, dz, psi_qp, arg, w = _pairwise(x, m)
        xia = xi(arg)
        gz = (xia * psi_qp * phi_prime(dz)) @ w
        # d/dy of rho(y) feeds the xi argument; the Psi factor contributes directly
        drho_q = (psi_prime(np.abs(dy)) * np.sign(dy)) @ w
        gy = 0.5 * drho_q * ((xi_prime(arg) * psi_qp * phi(dz)) @ w)
        gy = gy + (xia * psi_prime(np.abs(dy)) * np.sign(dy) * phi(dz)) @ w
        return np.stack([gy, gz], axis=-1).reshape(shape)

    def drift_value(x, m):
        x = np.asarray(x, dtype=float)
        speed = np.asarray(v(x), dtype=float)
        return np.stack([speed, np.zeros_like(speed)], axis=-1)

    def diffusion_value(t, x):
        x = np.asarray(x, dtype=float)
        z = np.abs(x[..., 1])
        return np.stack([np.zeros_like(z), np.sqrt(2.0 * params.kappa) * z], axis=-1)

    pop = PopulationModel(
        drift=DriftFunction(value=drift_value),
        running_cost=CostFunction(value=value, gradient=gradient),
        terminal_cost=CostFunction.zero(2),
        penalty=ControlPenalty.constant(1.0),
        diffusion=DiffusionFunction(value=diffusion_value),
        initial_law=product_law(
            [
                GaussianMarginal(0.0, params.y_std),
                LognormalMarginal(params.z_log_mean, params.z_log_std),
            ]
        ),
        control_mask=(0.0, 1.0),
        reflect_lower=(None, params.z_min),
    )
    return ModelSpec(d=2, T=1.0, populations=(pop,))


@dataclass(frozen=True)
class CrowdParams:
    """Two-group pedestrian setup on a rectangle.

    ``lam`` weighs aversion to the other group's density; ``sigma`` is the
    common diagonal diffusion; ``kde_bandwidth`` is used whenever the group
    densities are carried by particles instead of a grid. Terminal costs
    default to quadratic wells around ``targets``.
    """

    lam: float = 1.0
    sigma: tuple[float, float] = (0.2, 0.2)
    domain: tuple[tuple[float, float], tuple[float, float]] = ((-2.0, 2.0), (-2.0, 2.0))
    kde_bandwidth: float = 0.2
    horizon: float = 0.5
    psi_weight: float = 1.0
    targets: tuple[tuple[float, float], tuple[float, float]] = ((1.0, 0.0), (-1.0, 0.0))
    ic_centers: tuple[tuple[float, float], tuple[float, float]] = ((-0.5, 0.0), (0.5, 0.0))
    ic_std: float = 0.5
    psi1: CostFunction | None = None
    psi2: CostFunction | None = None

    def validate(self) -> None:
        if self.lam < 0:
            raise ValueError("aversion weight lam must be nonnegative")
        if any(s < 0 for s in self.sigma):
            raise ValueError("sigma entries must be nonnegative")
        if self.kde_bandwidth <= 0:
            raise ValueError("kde_bandwidth must be positive")
        for (lo, hi) in self.domain:
            if not lo < hi:
                raise ValueError("domain must be a nondegenerate rectangle")


def _quadratic_well(center, weight: float) -> CostFunction:
    c = np.asarray(center, dtype=float)
    return CostFunction(
        value=lambda x, m: 0.5 * weight * ((np.asarray(x) - c) ** 2).sum(axis=-1),
        gradient=lambda x, m: weight * (np.asarray(x, dtype=float) - c),
    )


def _crowd_cost(own: int, other: int, lam: float, bandwidth: float) -> CostFunction:
    def views(m):
        if not isinstance(m, tuple) or len(m) != 2:
            raise TypeError("crowd costs couple through a tuple of two measures")
        a, b = m[own], m[other]
        if isinstance(a, GridDensity) and isinstance(b, GridDensity) and a.grid != b.grid:
            raise ValueError("crowd populations live on mismatched grids")
        return a, b

    def value(x, m):
        mi, mj = views(m)
        return density_at(mi, x, bandwidth) + lam * density_at(mj, x, bandwidth)

    def gradient(x, m):
        mi, mj = views(m)
        return density_gradient_at(mi, x, bandwidth) + lam * density_gradient_at(
            mj, x, bandwidth
        )

    return CostFunction(value=value, gradient=gradient)


def build_crowd_model(params: CrowdParams) -> ModelSpec:
    """Two-population d = 2 crowd model with density-aversion running costs."""
    params.validate()
    terminal = [
        params.psi1 or _quadratic_well(params.targets[0], params.psi_weight),
        params.psi2 or _quadratic_well(params.targets[1], params.psi_weight),
    ]
    pops = []
    for i in range(2):
        pops.append(
            PopulationModel(
                drift=DriftFunction.zero(2),
                running_cost=_crowd_cost(i, 1 - i, params.lam, params.kde_bandwidth),
                terminal_cost=terminal[i],
                penalty=ControlPenalty.constant(1.0),
                diffusion=DiffusionFunction.constant(list(params.sigma)),
                initial_law=product_law(
                    [
                        GaussianMarginal(params.ic_centers[i][0], params.ic_std),
                        GaussianMarginal(params.ic_centers[i][1], params.ic_std),
                    ]
                ),
            )
        )
    return ModelSpec(d=2, T=params.horizon, populations=tuple(pops))
