"""
Convergence and truncation studies shared by the CLI and the test-suite.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .flux import truncate_flux, zero_flux
from .grid import Grid1D
from .oracles import heat_neumann_analytic
from .potential import RobinPoissonSpec, solve_robin_poisson_1d
from .solver import Model, SpeciesSpec, StepParams, simulate


def fit_order(h, err) -> float:
    """Least-squares slope of ``log err`` against ``log h``."""
    h = np.asarray(h, dtype=float)
    err = np.asarray(err, dtype=float)
    if h.size < 2:
        raise ValueError("need at least two resolutions to fit an order")
    if np.any(err <= 0):
        raise ValueError("errors must be positive to fit an order")
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


@dataclass
class OrderStudy:
    h: list
    errors: list
    order: float


def heat_model(n_cells: int, modes) -> Model:
    grid = Grid1D(n_cells)
    u0 = heat_neumann_analytic(grid.cell_centers, 0.0, modes)
    return Model(grid, [SpeciesSpec("u", 0.0, zero_flux(), u0)], name="heat-neumann")


def heat_error(n_cells: int, dt: float, T: float, modes) -> float:
    model = heat_model(n_cells, modes)
    traj = simulate(model, StepParams(dt), T, cadence=10**9)
    u = traj[-1][0].densities[0]
    return float(np.max(np.abs(u - heat_neumann_analytic(model.grid.cell_centers, T, modes))))


def heat_spatial_order(resolutions, T: float = 0.1, modes=(1.0, 1.0), dt_factor: float = 0.25) -> OrderStudy:
    """Refine ``h`` with ``dt = dt_factor * h^2`` so the time error stays O(h^2)."""
    hs, errs = [], []
    for n in resolutions:
        h = 1.0 / n
        steps = max(1, int(np.ceil(T / (dt_factor * h * h))))
        errs.append(heat_error(n, T / steps, T, modes))
        hs.append(h)
    return OrderStudy(hs, errs, fit_order(hs, errs))


def heat_temporal_order(dts, n_cells: int = 256, T: float = 0.2, modes=(1.0, 1.0)) -> OrderStudy:
    errs = [heat_error(n_cells, dt, T, modes) for dt in dts]
    return OrderStudy(list(dts), errs, fit_order(dts, errs))


def manufactured_potential(x):
    """``V*(x) = sin(pi x) + x^2/2`` and its first two derivatives."""
    return (
        np.sin(np.pi * x) + 0.5 * x * x,
        np.pi * np.cos(np.pi * x) + x,
        -np.pi**2 * np.sin(np.pi * x) + 1.0,
    )


def robin_poisson_error(n_cells: int, A0=0.2, A1=-0.3, lam=1.0, convention="plus") -> float:
    s = 1.0 if convention == "plus" else -1.0
    v_l, dv_l, _ = manufactured_potential(0.0)
    v_r, dv_r, _ = manufactured_potential(1.0)
    spec = RobinPoissonSpec(
        A0=A0, A1=A1, V0=v_l + s * A0 * dv_l, V1=v_r + s * A1 * dv_r,
        convention=convention, lam=lam,
    )
    grid = Grid1D(n_cells)
    v, _, d2 = manufactured_potential(grid.cell_centers)
    field = solve_robin_poisson_1d(spec, lam * d2, grid)
    return float(np.max(np.abs(field.values - v)))


def robin_poisson_order(resolutions, **kw) -> OrderStudy:
    hs = [1.0 / n for n in resolutions]
    errs = [robin_poisson_error(n, **kw) for n in resolutions]
    return OrderStudy(hs, errs, fit_order(hs, errs))


# ---------------------------------------------------------------------------
# truncation
# ---------------------------------------------------------------------------


def truncated_model(model: Model, p: int) -> Model:
    species = tuple(replace(s, flux=truncate_flux(s.flux, p)) for s in model.species)
    return replace(model, species=species)


@dataclass
class TruncationRow:
    p: int
    max_difference: float
    max_density: float


@dataclass
class TruncationStudy:
    rows: list
    base_max_density: float
    nonincreasing: bool
    exact_above_max: bool

    @property
    def passed(self) -> bool:
        return self.nonincreasing and self.exact_above_max


def _stack(traj):
    return np.array([np.concatenate([np.ravel(u) for u in s.densities]) for s, _ in traj])


def truncation_study(model: Model, params: StepParams, T: float, p_list) -> TruncationStudy:
    """Compare the full trajectory against the ``sigma_p`` trajectories.

    Checks that the max difference does not increase along ``p_list`` (sorted)
    and is exactly zero whenever ``p`` is at least the largest density the base
    run ever reached.
    """
    p_list = sorted(int(p) for p in p_list)
    if not p_list:
        raise ValueError("p_list is empty")
    base = _stack(simulate(model, params, T))
    base_max = float(base.max())
    rows = []
    for p in p_list:
        traj = _stack(simulate(truncated_model(model, p), params, T))
        rows.append(TruncationRow(p, float(np.max(np.abs(traj - base))), float(traj.max())))
    diffs = [r.max_difference for r in rows]
    nonincreasing = all(b <= a for a, b in zip(diffs, diffs[1:]))
    exact = all(r.max_difference == 0.0 for r in rows if r.p >= base_max)
    return TruncationStudy(rows, base_max, nonincreasing, exact)
