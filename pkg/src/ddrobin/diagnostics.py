"""
Per-step diagnostics: norms, negative parts, mass and energy budgets.

The energy balance is the discrete identity obtained by testing the
backward-Euler step with the new density itself:

    tau/2 |u|^2 + tau/2 |u - u_old|^2 + dt eta |grad_h u|^2
        = tau/2 |u_old|^2 - dt sum_f D_f (u_b - u_a) + dt int_boundary sigma u,

where ``D_f`` is the drift part of the SG face flux. The scheme satisfies it
up to round-off, so a relative residual above ``1e-8`` points at a bug.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .grid import Grid1D, Grid2D, cell_integral
from .potential import PotentialField, w1inf_norm
from .solver import NEGATIVITY_THRESHOLD, Model, StepParams, SystemState, mass_budget, transport_fluxes

BUDGET_TOL = 1e-10
ENERGY_TOL = 1e-8


class Flag(str, enum.Enum):
    NEGATIVITY = "NegativityViolation"
    ENERGY = "EnergyViolation"
    BUDGET = "BudgetViolation"
    PICARD_FAIL = "PicardFail"


@dataclass(frozen=True)
class SpeciesDiagnostics:
    l1_norm: float
    l2_norm: float
    min_value: float
    negative_part_l1: float
    above_height_l1: float
    mass: float
    mass_budget_residual: float = 0.0
    energy_balance_residual: float = 0.0


@dataclass(frozen=True)
class DiagnosticsRecord:
    t: float
    step: int
    species: tuple[SpeciesDiagnostics, ...]
    w1inf_norm: float
    boundary_trace_max: float
    w21_norm: float
    mass_budget_residual: float
    energy_balance_residual: float
    picard_iterations: int
    flags: frozenset = field(default_factory=frozenset)

    @property
    def passed(self) -> bool:
        return not self.flags


def species_norms(grid, u, height: float) -> SpeciesDiagnostics:
    u = np.asarray(u, dtype=float)
    return SpeciesDiagnostics(
        l1_norm=cell_integral(grid, np.abs(u)),
        l2_norm=float(np.sqrt(cell_integral(grid, u * u))),
        min_value=float(np.min(u)),
        negative_part_l1=cell_integral(grid, np.maximum(-u, 0.0)),
        above_height_l1=cell_integral(grid, np.maximum(u - height, 0.0)),
        mass=cell_integral(grid, u),
    )


def w21_norm(field: PotentialField, grid) -> float:
    """Discrete L1 norm of ``V``, its face gradient and its second differences
    (interior cells only). Reported, never thresholded."""
    v = field.values
    vol = grid.cell_volume
    total = float(np.sum(np.abs(v))) * vol
    faces = grid.interior_faces()
    vf = v.ravel()
    total += float(np.sum(np.abs(vf[faces.right] - vf[faces.left]) * faces.measure))
    if isinstance(grid, Grid1D):
        h = grid.cell_width
        total += float(np.sum(np.abs(np.diff(v, 2)))) / (h * h) * vol
    else:
        total += float(np.sum(np.abs(np.diff(v, 2, axis=0)))) / grid.h_x**2 * vol
        total += float(np.sum(np.abs(np.diff(v, 2, axis=1)))) / grid.h_y**2 * vol
    return total


def _potential_fields(state: SystemState, grid):
    return (
        w1inf_norm(state.potential, grid),
        float(np.abs(state.potential.boundary_trace).max(initial=0.0)),
        w21_norm(state.potential, grid),
    )


def record_initial(state: SystemState, model: Model) -> DiagnosticsRecord:
    grid = model.grid
    sp = tuple(species_norms(grid, u, s.flux.height) for u, s in zip(state.densities, model.species))
    w1, tr, w21 = _potential_fields(state, grid)
    flags = frozenset({Flag.NEGATIVITY}) if any(d.min_value < NEGATIVITY_THRESHOLD for d in sp) else frozenset()
    return DiagnosticsRecord(state.t, state.step_index, sp, w1, tr, w21, 0.0, 0.0, 0, flags)


def energy_residual(state: SystemState, prev: SystemState, model: Model, dt: float, index: int) -> float:
    """Relative residual of the discrete energy identity for one species."""
    grid = model.grid
    spec = model.species[index]
    tau, eta = spec.time_scale, spec.diffusion
    u = np.ravel(state.densities[index])
    o = np.ravel(prev.densities[index])
    vol = grid.cell_volume
    faces = grid.interior_faces()
    du = u[faces.right] - u[faces.left]
    transport = transport_fluxes(grid, u, state.drift_potential, spec.alpha, eta)
    diffusive = eta * faces.measure * du / faces.spacing
    # transport = -(measure * J); J = diffusive part + drift part
    drift = -transport - diffusive
    bf = grid.boundary_faces()
    bterm = float(np.sum(bf.measure * state.boundary_flux[index] * u[bf.cell]))
    grad2 = float(np.sum(eta * faces.measure * du * du / faces.spacing))
    lhs = 0.5 * tau * vol * (np.sum(u * u) + np.sum((u - o) ** 2)) + dt * grad2
    rhs = 0.5 * tau * vol * np.sum(o * o) + dt * (-float(np.sum(drift * du)) + bterm)
    scale = 1.0 + 0.5 * tau * vol * (np.sum(u * u) + np.sum(o * o)) + dt * (
        grad2 + float(np.sum(np.abs(drift * du))) + abs(bterm)
    )
    return float(abs(lhs - rhs) / scale)


def record_step(state: SystemState, prev_state: SystemState, model: Model, params: StepParams) -> DiagnosticsRecord:
    """Diagnose the step ``prev_state -> state``. Pure."""
    grid = model.grid
    dt = state.t - prev_state.t if state.t > prev_state.t else params.dt
    out = []
    flags = set()
    worst_budget = 0.0
    worst_energy = 0.0
    bf = grid.boundary_faces()
    for i, (u, spec) in enumerate(zip(state.densities, model.species)):
        d = species_norms(grid, u, spec.flux.height)
        flux_int = float(np.sum(bf.measure * state.boundary_flux[i]))
        budget = mass_budget(prev_state, state, flux_int, dt, grid, i, spec.time_scale)
        energy = energy_residual(state, prev_state, model, dt, i)
        out.append(
            SpeciesDiagnostics(
                d.l1_norm, d.l2_norm, d.min_value, d.negative_part_l1, d.above_height_l1,
                d.mass, budget, energy,
            )
        )
        if d.min_value < NEGATIVITY_THRESHOLD:
            flags.add(Flag.NEGATIVITY)
        if abs(budget) > BUDGET_TOL * (1.0 + abs(d.mass)):
            flags.add(Flag.BUDGET)
        if energy > ENERGY_TOL:
            flags.add(Flag.ENERGY)
        worst_budget = max(worst_budget, abs(budget))
        worst_energy = max(worst_energy, energy)
    if state.picard_iterations > params.picard_max_iter:
        flags.add(Flag.PICARD_FAIL)
    w1, tr, w21 = _potential_fields(state, grid)
    return DiagnosticsRecord(
        state.t, state.step_index, tuple(out), w1, tr, w21,
        worst_budget, worst_energy, state.picard_iterations, frozenset(flags),
    )


# ---------------------------------------------------------------------------
# Growth envelopes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnvelopeFit:
    A: float
    B: float
    max_exceedance: float


def _upper_hull(t: np.ndarray, y: np.ndarray) -> np.ndarray:
    """Indices of the upper convex hull of the points ``(t, y)`` sorted by t."""
    hull: list[int] = []
    for i in range(len(t)):
        while len(hull) >= 2:
            a, b = hull[-2], hull[-1]
            cross = (t[b] - t[a]) * (y[i] - y[a]) - (y[b] - y[a]) * (t[i] - t[a])
            if cross >= 0:
                hull.pop()
            else:
                break
        hull.append(i)
    return np.array(hull)


def gronwall_envelope(times, norms) -> EnvelopeFit:
    """Fit ``A exp(B t)`` dominating a positive time series.

    The slope ``B`` is the least-squares slope of ``log norm`` over the
    vertices of the upper hull; ``A`` is then raised until every sample lies
    under the envelope, so the reported exceedance is zero up to round-off.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(norms, dtype=float)
    if t.size < 3 or t.size != y.size:
        raise ValueError("gronwall_envelope needs at least 3 (t, norm) samples")
    if np.any(y < 0):
        raise ValueError("norms must be nonnegative")
    order = np.argsort(t, kind="stable")
    t, y = t[order], y[order]
    pos = y > 0
    if not pos.any():
        return EnvelopeFit(0.0, 0.0, 0.0)
    t, ly = t[pos], np.log(y[pos])
    if t.size == 1:
        return EnvelopeFit(float(y[pos][0]), 0.0, 0.0)
    hull = _upper_hull(t, ly)
    th, yh = t[hull], ly[hull]
    if th.size >= 2 and np.ptp(th) > 0:
        B = float(np.polyfit(th, yh, 1)[0])
    else:
        B = 0.0
    log_a = float(np.max(ly - B * t))
    A = float(np.exp(log_a))
    exceed = float(np.max(np.exp(ly - (log_a + B * t))) - 1.0)
    return EnvelopeFit(A, B, max(exceed, 0.0))


# ---------------------------------------------------------------------------
# Gagliardo-Nirenberg constant and smallness threshold
# ---------------------------------------------------------------------------


def smallness_threshold(gn_constant: float) -> float:
    """Largest admissible ``||u0||_1`` for the small-data L2 bound: ``1/(2 C_GN)``."""
    if not gn_constant > 0:
        raise ValueError(f"gn_constant must be positive, got {gn_constant}")
    return 1.0 / (2.0 * gn_constant)


def gn_ratio(v, grid: Grid2D) -> float:
    """``||v||_3^3 / (||v||_1 ||v||_{H^1}^2)`` with discrete norms."""
    v = np.asarray(v, dtype=float).reshape(grid.shape)
    vol = grid.cell_volume
    l1 = float(np.sum(np.abs(v))) * vol
    l3 = float(np.sum(np.abs(v) ** 3)) * vol
    l2 = float(np.sum(v * v)) * vol
    gx = np.diff(v, axis=0) / grid.h_x
    gy = np.diff(v, axis=1) / grid.h_y
    grad = float(np.sum(gx * gx) + np.sum(gy * gy)) * vol
    den = l1 * (l2 + grad)
    return l3 / den if den > 0 else 0.0


def estimate_gn_constant(grid: Grid2D, n_samples: int = 400, seed: int = 0) -> float:
    """Largest :func:`gn_ratio` over random nonnegative Gaussian-bump fields.

    Bumps are centered anywhere in the closed rectangle (corners and edges
    included, where the ratio is largest) with widths between two cells and
    half the domain; some samples superpose several bumps.
    """
    rng = np.random.default_rng(seed)
    X, Y = grid.meshgrid()
    x0, x1, y0, y1 = grid.domain
    L = min(x1 - x0, y1 - y0)
    hmin = max(grid.h_x, grid.h_y)
    corners = [(x0, y0), (x0, y1), (x1, y0), (x1, y1)]
    best = 0.0
    for k in range(n_samples):
        nb = 1 if k % 3 else int(rng.integers(2, 5))
        v = np.zeros(grid.shape)
        for _ in range(nb):
            if rng.random() < 0.25:
                cx, cy = corners[int(rng.integers(4))]
            else:
                cx, cy = rng.uniform(x0, x1), rng.uniform(y0, y1)
            w = np.exp(rng.uniform(np.log(2 * hmin), np.log(0.5 * L)))
            v += rng.uniform(0.2, 1.0) * np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * w * w))
        best = max(best, gn_ratio(v, grid))
    return best
