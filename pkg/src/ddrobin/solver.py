"""
Implicit finite-volume solver for

    tau_i d_t u_i = div(eta_i grad u_i + alpha_i u_i grad V),   V = B(t, u),

with the Robin closure ``eta du/dnu + alpha u dV/dnu = sigma(t, x, u, psi)``.

Interior faces use Scharfetter-Gummel exponential fitting; time stepping is
backward Euler. The potential is lagged and refreshed in an outer Picard
loop. At the boundary the flux is split as ``sigma(v) = sigma(0) + q v`` with
``q`` the secant slope through the previous Picard iterate; the ``q v`` part
goes into the matrix when ``q < 0`` and is treated explicitly otherwise. With
``sigma(0) >= 0`` this keeps the system an M-matrix with a nonnegative
right-hand side, so every Picard iterate is nonnegative.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .flux import FluxSpec
from .grid import Grid1D, Grid2D
from .potential import NoPotential, PotentialField, SolverError


class PicardError(SolverError):
    """The outer potential iteration did not reach its tolerance."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


class PositivityError(SolverError):
    """A density dropped below the negativity threshold."""

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state


NEGATIVITY_THRESHOLD = -1e-12


@dataclass(frozen=True)
class SpeciesSpec:
    name: str
    alpha: float
    flux: FluxSpec
    initial_condition: np.ndarray
    diffusion: float = 1.0
    time_scale: float = 1.0

    def __post_init__(self):
        if not self.diffusion > 0:
            raise ValueError(f"{self.name}: diffusion must be positive")
        if not self.time_scale > 0:
            raise ValueError(f"{self.name}: time_scale must be positive")
        u0 = np.array(self.initial_condition, dtype=float)
        if not np.all(np.isfinite(u0)):
            raise ValueError(f"{self.name}: initial condition is not finite")
        if np.any(u0 < 0):
            raise ValueError(f"{self.name}: initial condition has negative entries")
        u0.setflags(write=False)
        object.__setattr__(self, "initial_condition", u0)


@dataclass(frozen=True)
class Model:
    """Everything needed to advance one system: grid, species and ``B``.

    ``psi_scale`` and ``psi_offset`` map the potential trace on each boundary
    face to the flux argument, ``psi = offset + scale * V|_boundary``.
    """

    grid: Grid1D | Grid2D
    species: tuple[SpeciesSpec, ...]
    potential: Callable = None
    psi_scale: np.ndarray = None
    psi_offset: np.ndarray = None
    name: str = "custom"

    def __post_init__(self):
        object.__setattr__(self, "species", tuple(self.species))
        if not self.species:
            raise ValueError("model needs at least one species")
        for s in self.species:
            if s.initial_condition.size != self.grid.size:
                raise ValueError(
                    f"{s.name}: initial condition has {s.initial_condition.size} "
                    f"entries, grid has {self.grid.size} cells"
                )
            s.flux.check_growth_exponent(self.grid.dim)
        if self.potential is None:
            object.__setattr__(self, "potential", NoPotential(self.grid))
        nb = self.grid.boundary_faces().cell.size
        for name, default in (("psi_scale", 1.0), ("psi_offset", 0.0)):
            val = getattr(self, name)
            arr = np.full(nb, default) if val is None else np.broadcast_to(
                np.asarray(val, dtype=float), (nb,)
            ).copy()
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def psi(self, potential: PotentialField) -> np.ndarray:
        return self.psi_offset + self.psi_scale * potential.boundary_trace


@dataclass(frozen=True)
class StepParams:
    dt: float
    picard_tol: float = 1e-10
    picard_max_iter: int = 50
    theta: float = 1.0

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.picard_tol > 0:
            raise ValueError("picard_tol must be positive")
        if int(self.picard_max_iter) != self.picard_max_iter or self.picard_max_iter < 1:
            raise ValueError("picard_max_iter must be a positive integer")
        if self.theta != 1.0:
            raise ValueError("only backward Euler (theta = 1) is supported")


@dataclass(frozen=True)
class SystemState:
    """Densities and potential at one time level.

    ``boundary_flux[i]`` holds the flux actually applied on each boundary face
    during the step that produced this state, and ``drift_potential`` the
    potential values used for transport in that step's final linear solve.
    """

    t: float
    densities: tuple[np.ndarray, ...]
    potential: PotentialField
    step_index: int = 0
    boundary_flux: tuple[np.ndarray, ...] = ()
    drift_potential: np.ndarray | None = None
    picard_iterations: int = 0

    def __post_init__(self):
        dens = tuple(np.asarray(u, dtype=float) for u in self.densities)
        for u in dens:
            if not np.all(np.isfinite(u)):
                raise SolverError("non-finite density in state")
        object.__setattr__(self, "densities", dens)
        if self.drift_potential is None:
            object.__setattr__(self, "drift_potential", self.potential.values)


def initial_state(model: Model) -> SystemState:
    grid = model.grid
    dens = tuple(np.array(s.initial_condition, dtype=float).reshape(grid.shape) for s in model.species)
    nb = grid.boundary_faces().cell.size
    pot = model.potential(0.0, dens)
    return SystemState(0.0, dens, pot, 0, tuple(np.zeros(nb) for _ in dens))


# ---------------------------------------------------------------------------
# Face fluxes
# ---------------------------------------------------------------------------


def bernoulli(z):
    """``z / (exp(z) - 1)`` with the removable singularity ``B(0) = 1``."""
    z = np.asarray(z, dtype=float)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        out = z / np.expm1(z)
    out = np.where(z == 0.0, 1.0, out)
    out = np.where(np.isnan(out) & (z > 0), 0.0, out)
    return float(out) if out.ndim == 0 else out


def sg_face_flux(u_left, u_right, dV, h, alpha=1.0, eta=1.0):
    """Scharfetter-Gummel approximation of ``-(eta u' + alpha u V')`` across a
    face of width ``h``, oriented from left to right.

    ``dV = V_right - V_left``. With ``z = alpha dV / eta`` the flux is
    ``(eta/h) [B(z) u_left - B(-z) u_right]``; it vanishes on the equilibrium
    ``u ~ exp(-alpha V / eta)`` and reduces to ``(eta/h)(u_left - u_right)``
    at ``z = 0``.
    """
    z = alpha * np.asarray(dV, dtype=float) / eta
    return (eta / h) * (bernoulli(z) * np.asarray(u_left) - bernoulli(-z) * np.asarray(u_right))


def _face_coefficients(grid, v_flat, alpha, eta):
    faces = grid.interior_faces()
    z = alpha * (v_flat[faces.right] - v_flat[faces.left]) / eta
    scale = eta * faces.measure / faces.spacing
    return faces, scale * bernoulli(z), scale * bernoulli(-z)


def transport_fluxes(grid, u, v_values, alpha: float, eta: float) -> np.ndarray:
    """Face-integrated SG transport ``measure * F`` on every interior face."""
    faces, ca, cb = _face_coefficients(grid, np.ravel(v_values), alpha, eta)
    u = np.ravel(u)
    return ca * u[faces.left] - cb * u[faces.right]


# ---------------------------------------------------------------------------
# Boundary linearization
# ---------------------------------------------------------------------------


def _boundary_split(flux: FluxSpec, t, points, v_star, psi):
    """Return ``(sigma_star, q)`` with ``sigma(v) ~ sigma_star + q (v - v_star)``.

    ``q`` is the tangent slope (central difference) when it is negative and
    leaves a nonnegative constant part ``sigma_star - q v_star``; otherwise the
    secant through ``v = 0`` is used, which keeps that constant part equal to
    ``sigma(0)``. Either way the boundary contribution never breaks the
    M-matrix structure of the step.
    """
    shape = v_star.shape
    zeros = np.zeros_like(v_star)

    def ev(v):
        return np.broadcast_to(np.asarray(flux(t, points, v, psi), dtype=float), shape)

    sig0 = ev(zeros)
    sigv = ev(v_star)
    step = 1e-6 * (1.0 + np.abs(v_star))
    tangent = (ev(v_star + step) - ev(v_star - step)) / (2 * step)
    secant = np.empty_like(v_star)
    nz = v_star != 0.0
    secant[nz] = (sigv[nz] - sig0[nz]) / v_star[nz]
    secant[~nz] = tangent[~nz]
    use_tangent = (tangent < 0) & (sigv - tangent * v_star >= 0)
    q = np.where(use_tangent, tangent, secant)
    if not (np.all(np.isfinite(sigv)) and np.all(np.isfinite(q))):
        raise SolverError("boundary flux returned non-finite values")
    return sigv.copy(), q


def _solve_species(model, spec, u_old, v_star_cells, v_transport, psi, t_new, dt):
    grid = model.grid
    bf = grid.boundary_faces()
    n = grid.size
    faces, ca, cb = _face_coefficients(grid, np.ravel(v_transport), spec.alpha, spec.diffusion)
    mass = spec.time_scale * grid.cell_volume / dt
    diag = np.full(n, mass)
    np.add.at(diag, faces.left, ca)
    np.add.at(diag, faces.right, cb)
    rhs = mass * np.ravel(u_old)

    v_star = np.ravel(v_star_cells)[bf.cell]
    sig_star, q = _boundary_split(spec.flux, t_new, bf.points, v_star, psi)
    implicit = q < 0
    np.add.at(diag, bf.cell, np.where(implicit, -q * bf.measure, 0.0))
    constant = sig_star - q * v_star
    explicit_part = np.where(implicit, constant, sig_star)
    np.add.at(rhs, bf.cell, bf.measure * explicit_part)

    if grid.dim == 1:
        ab = np.zeros((3, n))
        ab[0, 1:] = -cb  # a[i, i+1]
        ab[1] = diag
        ab[2, :-1] = -ca  # a[i+1, i]
        try:
            u = scipy.linalg.solve_banded((1, 1), ab, rhs)
        except np.linalg.LinAlgError as exc:
            raise SolverError(f"species {spec.name}: singular transport matrix") from exc
    else:
        a = sp.coo_matrix(
            (
                np.concatenate([diag, -cb, -ca]),
                (
                    np.concatenate([np.arange(n), faces.left, faces.right]),
                    np.concatenate([np.arange(n), faces.right, faces.left]),
                ),
            ),
            shape=(n, n),
        ).tocsc()
        u = spla.spsolve(a, rhs)
    if not np.all(np.isfinite(u)):
        raise SolverError(f"species {spec.name}: linear solve produced non-finite values")
    applied = np.where(implicit, constant + q * u[bf.cell], explicit_part)
    return u, applied


def assemble_step(state: SystemState, model: Model, params: StepParams) -> SystemState:
    """Advance ``state`` by one backward-Euler step of size ``params.dt``.

    Raises :class:`PicardError` if the potential/density fixed point is not
    reached within ``picard_max_iter`` iterations and :class:`PositivityError`
    if any density ends below ``-1e-12``.
    """
    dt = params.dt
    t_new = (state.step_index + 1) * dt if state.t == state.step_index * dt else state.t + dt
    grid = model.grid
    u_old = [np.ravel(u) for u in state.densities]
    u_star = [u.copy() for u in u_old]
    v_star = model.potential(t_new, [u.reshape(grid.shape) for u in u_star])
    change = math.inf
    omega = 1.0
    prev_delta = None
    for it in range(1, params.picard_max_iter + 1):
        psi = model.psi(v_star)
        results = [
            _solve_species(model, s, u_old[i], u_star[i], v_star.values, psi, t_new, dt)
            for i, s in enumerate(model.species)
        ]
        u_new = [r[0] for r in results]
        v_new = model.potential(t_new, [u.reshape(grid.shape) for u in u_new])
        delta = np.concatenate([a - b for a, b in zip(u_new, u_star)])
        new_change = max(
            float(np.max(np.abs(delta))),
            float(np.max(np.abs(v_new.values - v_star.values))),
        )
        drift = v_star.values
        if new_change < params.picard_tol:
            change = new_change
            u_star, v_star = u_new, v_new
            break
        # halve the step when consecutive increments oscillate without contracting
        if prev_delta is not None and new_change > 0.5 * change and float(delta @ prev_delta) < 0:
            omega = max(0.5 * omega, 1.0 / 64)
        elif omega < 1.0 and new_change < 0.25 * change:
            omega = min(1.0, 2.0 * omega)
        change = new_change
        prev_delta = delta
        if omega == 1.0:
            u_star, v_star = u_new, v_new
        else:
            u_star = [a + omega * (b - a) for a, b in zip(u_star, u_new)]
            v_star = model.potential(t_new, [u.reshape(grid.shape) for u in u_star])
    new_state = SystemState(
        t_new,
        tuple(u.reshape(grid.shape) for u in u_star),
        v_star,
        state.step_index + 1,
        tuple(r[1] for r in results),
        drift,
        it,
    )
    if change >= params.picard_tol:
        raise PicardError(
            f"Picard iteration stalled at change {change:.3e} after {it} iterations "
            f"(t={t_new:.6g})",
            new_state,
        )
    worst = min(float(np.min(u)) for u in u_star)
    if worst < NEGATIVITY_THRESHOLD:
        raise PositivityError(f"density {worst:.3e} below threshold at t={t_new:.6g}", new_state)
    return new_state


def boundary_flux_integral(state: SystemState, grid, species_index: int) -> float:
    bf = grid.boundary_faces()
    return float(np.sum(bf.measure * state.boundary_flux[species_index]))


def mass_budget(
    state_before: SystemState,
    state_after: SystemState,
    boundary_flux_integral: float,
    dt: float,
    grid,
    species_index: int = 0,
    time_scale: float = 1.0,
) -> float:
    """``tau (M_after - M_before) - dt * int_boundary sigma`` for one species."""
    m0 = float(np.sum(state_before.densities[species_index])) * grid.cell_volume
    m1 = float(np.sum(state_after.densities[species_index])) * grid.cell_volume
    return time_scale * (m1 - m0) - dt * boundary_flux_integral


# ---------------------------------------------------------------------------
# Time loop
# ---------------------------------------------------------------------------


class SimulationError(SolverError):
    """A step failed; ``trajectory`` holds everything computed before it."""

    def __init__(self, message, trajectory, cause=None):
        super().__init__(message)
        self.trajectory = trajectory
        self.cause = cause


def n_steps_for(T: float, dt: float) -> int:
    n = int(round(T / dt))
    if n < 1 or abs(n * dt - T) > 1e-9 * max(1.0, T):
        raise ValueError(f"T={T} is not an integer multiple of dt={dt}")
    return n


def simulate(
    model: Model,
    params: StepParams,
    T: float,
    cadence: int = 1,
    state: SystemState | None = None,
):
    """Run from ``state`` (default: the initial condition) to ``T``.

    Returns the list of ``(state, record)`` pairs emitted every ``cadence``
    steps (the initial and final states are always included). Every step is
    diagnosed; failures raise :class:`SimulationError` carrying the partial
    trajectory whose last entry is the last valid state.
    """
    from .diagnostics import Flag, record_initial, record_step

    if cadence < 1:
        raise ValueError("cadence must be >= 1")
    n = n_steps_for(T, params.dt)
    state = initial_state(model) if state is None else state
    trajectory = [(state, record_initial(state, model))]
    for k in range(n):
        try:
            new = assemble_step(state, model, params)
        except (PicardError, PositivityError) as exc:
            if exc.state is not None:
                flag = Flag.PICARD_FAIL if isinstance(exc, PicardError) else Flag.NEGATIVITY
                rec = record_step(exc.state, state, model, params)
                rec = replace(rec, flags=rec.flags | {flag})
                trajectory.append((exc.state, rec))
            raise SimulationError(str(exc), trajectory, exc) from exc
        except SolverError as exc:
            raise SimulationError(str(exc), trajectory, exc) from exc
        rec = record_step(new, state, model, params)
        if (k + 1) % cadence == 0 or k == n - 1 or rec.flags:
            trajectory.append((new, rec))
        state = new
    return trajectory


def run_simulation(config):
    """Build the model described by a :class:`~ddrobin.config.RunConfig` and run it."""
    from .presets import build_model

    model = build_model(config)
    params = StepParams(config.dt, config.picard_tol, config.picard_max_iter)
    return simulate(model, params, config.T, config.cadence)
