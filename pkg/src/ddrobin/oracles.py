"""
Independent references for the test-suite.

* :func:`dense_newton_step` solves one backward-Euler step of a 1-D model as a
  single coupled nonlinear system in ``(u, V)`` by damped Newton with a
  finite-difference Jacobian. It shares only the SG face formula with the
  production path, not the Picard loop nor the boundary linearization.
* :func:`quadrature_poisson` evaluates the Green-kernel representation of the
  1-D Robin problem by midpoint quadrature.
* :func:`heat_neumann_analytic` is the cosine-series solution of the heat
  equation with homogeneous Neumann data on (0, 1).
"""

from __future__ import annotations

import numpy as np

from .grid import Grid1D
from .potential import PotentialField, RobinPoisson1D, RobinPoissonSpec, SolverError, green_kernel
from .solver import Model, SystemState, sg_face_flux


def _unpack(z, n_species, n):
    u = z[: n_species * n].reshape(n_species, n)
    ext = z[n_species * n :]  # [ghost_L, V_0 .. V_{n-1}, ghost_R]
    return u, ext


def _residual(z, u_old, model: Model, spec: RobinPoissonSpec, t_new, dt):
    grid = model.grid
    n, h = grid.n_cells, grid.cell_width
    ns = len(model.species)
    u, ext = _unpack(z, ns, n)
    v = ext[1:-1]
    s = spec.convention.sign
    out = np.empty_like(z)

    trace = np.array([0.5 * (ext[0] + ext[1]), 0.5 * (ext[-2] + ext[-1])])
    psi = model.psi_offset + model.psi_scale * trace
    points = np.array([grid.x_left, grid.x_right])
    for i, sp in enumerate(model.species):
        F = sg_face_flux(u[i, :-1], u[i, 1:], v[1:] - v[:-1], h, sp.alpha, sp.diffusion)
        div = np.zeros(n)
        div[:-1] -= F
        div[1:] += F
        sig = np.asarray(sp.flux(t_new, points, np.array([u[i, 0], u[i, -1]]), psi), dtype=float)
        div[0] += sig[0]
        div[-1] += sig[1]
        # scaled so that every row is O(u)
        out[i * n : (i + 1) * n] = u[i] - u_old[i] - dt / (sp.time_scale * h) * div

    off = ns * n
    out[off] = (0.5 - s * spec.A0 / h) * ext[0] + (0.5 + s * spec.A0 / h) * ext[1] - spec.V0
    src = spec.source(list(u))
    out[off + 1 : off + 1 + n] = (ext[:-2] - 2.0 * ext[1:-1] + ext[2:]) - h * h * src / spec.lam
    out[-1] = (0.5 - s * spec.A1 / h) * ext[-2] + (0.5 + s * spec.A1 / h) * ext[-1] - spec.V1
    return out


def _fd_jacobian(fun, z, rel_step=1e-4):
    """Central differences; exact up to round-off when ``fun`` is linear."""
    cols = []
    for j in range(z.size):
        step = rel_step * max(1.0, abs(z[j]))
        zp = z.copy()
        zm = z.copy()
        zp[j] += step
        zm[j] -= step
        cols.append((fun(zp) - fun(zm)) / (2 * step))
    return np.column_stack(cols)


def dense_newton_step(
    state: SystemState,
    model: Model,
    dt: float,
    tol: float = 1e-12,
    max_iter: int = 60,
    initial_guess=None,
):
    """One fully implicit step by damped Newton.

    Returns ``(densities, potential, iterations)``. Requires a 1-D model with
    a :class:`~ddrobin.potential.RobinPoisson1D` operator, at most 32 cells
    and at most 3 species.
    """
    grid = model.grid
    if not isinstance(grid, Grid1D) or not isinstance(model.potential, RobinPoisson1D):
        raise ValueError("dense_newton_step handles 1-D Robin-Poisson models only")
    if grid.n_cells > 32 or len(model.species) > 3:
        raise ValueError("dense_newton_step is limited to <= 32 cells and <= 3 species")
    spec = model.potential.spec
    n, h = grid.n_cells, grid.cell_width
    t_new = state.t + dt
    u_old = np.array([np.ravel(u) for u in state.densities])

    if initial_guess is None:
        v = state.potential.values
        g_l = 2.0 * state.potential.boundary_trace[0] - v[0]
        g_r = 2.0 * state.potential.boundary_trace[1] - v[-1]
        z = np.concatenate([u_old.ravel(), [g_l], v, [g_r]])
    else:
        z = np.asarray(initial_guess, dtype=float).copy()

    def fun(zz):
        return _residual(zz, u_old, model, spec, t_new, dt)

    f = fun(z)
    norm = np.max(np.abs(f))
    it = 0
    while norm > tol:
        if it >= max_iter:
            raise SolverError(f"Newton did not converge: residual {norm:.3e} after {it} iterations")
        J = _fd_jacobian(fun, z)
        try:
            dz = np.linalg.solve(J, -f)
        except np.linalg.LinAlgError as exc:
            raise SolverError("singular Newton Jacobian") from exc
        lam = 1.0
        while True:
            z_try = z + lam * dz
            f_try = fun(z_try)
            n_try = np.max(np.abs(f_try))
            if n_try < norm or lam < 1e-6:
                break
            lam *= 0.5
        if not n_try < norm:
            raise SolverError(f"Newton line search failed at residual {norm:.3e}")
        z, f, norm = z_try, f_try, n_try
        it += 1
        if np.max(np.abs(lam * dz)) < 1e-15 * max(1.0, np.max(np.abs(z))) and norm > tol:
            raise SolverError(f"Newton stagnated at residual {norm:.3e}")

    u, ext = _unpack(z, len(model.species), n)
    trace = np.array([0.5 * (ext[0] + ext[1]), 0.5 * (ext[-2] + ext[-1])])
    dnu = np.array([-(ext[1] - ext[0]) / h, (ext[-1] - ext[-2]) / h])
    return [row.copy() for row in u], PotentialField(ext[1:-1].copy(), trace, dnu), it


def quadrature_poisson(spec: RobinPoissonSpec, rhs, grid: Grid1D | None = None) -> PotentialField:
    """Midpoint-rule evaluation of

        V(x_i) = sum_j G(x_i, y_j) phi(y_j) h + (x_i - A0)/(1 + A1 - A0) (V1 - V0) + V0

    for ``V'' = phi`` on (0, 1) with ``V + A_i V' = V_i`` at both ends.
    ``rhs`` is ``phi``; ``spec.lam`` is ignored. The boundary trace and normal
    derivative are the exact values of the quadrature representation.
    """
    rhs = np.asarray(rhs, dtype=float)
    grid = Grid1D(rhs.size) if grid is None else grid
    if (grid.x_left, grid.x_right) != (0.0, 1.0):
        raise ValueError("quadrature_poisson is defined on (0, 1)")
    spec.check_well_posed()
    x = grid.cell_centers
    h = grid.cell_width
    det = spec.determinant
    affine_slope = (spec.V1 - spec.V0) / det

    def at(pts):
        G = green_kernel(spec, pts[:, None], x[None, :])
        return G @ rhs * h + (pts - spec.A0) * affine_slope + spec.V0

    values = at(x)
    ends = np.array([0.0, 1.0])
    trace = at(ends)
    # d/dx G(x, y): -(1 + A1 - y)/det at x=0 (x <= y), -(A0 - y)/det at x=1 (x >= y)
    d0 = -np.sum((1.0 + spec.A1 - x) / det * rhs) * h + affine_slope
    d1 = np.sum(-(spec.A0 - x) / det * rhs) * h + affine_slope
    return PotentialField(values, trace, np.array([-d0, d1]))


def heat_neumann_analytic(x, t, modes) -> np.ndarray:
    """``a_0 + sum_k a_k exp(-(k pi)^2 t) cos(k pi x)`` with ``modes = [a_0, a_1, ...]``."""
    x = np.asarray(x, dtype=float)
    out = np.full_like(x, float(modes[0]))
    for k, a in enumerate(modes[1:], start=1):
        out = out + a * np.exp(-((k * np.pi) ** 2) * t) * np.cos(k * np.pi * x)
    return out
