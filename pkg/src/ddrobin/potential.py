"""
Nonlocal potential operators ``V = B(t, u)``.

Two concrete operators are provided:

* :class:`RobinPoisson1D` solves ``lam * V'' = sum_i beta_i u_i + zeta`` on an
  interval with Robin data at both ends. The discretization is the standard
  cell-centered three-point stencil with one ghost value per end, which makes
  the Robin relation hold exactly for the ghost-averaged trace.
* :class:`MollifiedPoisson2D` solves the Dirichlet problem ``Lap V = (E u * phi_p)|_Omega``
  on a rectangle, i.e. the Poisson resolvent applied to the zero-extended and
  mollified density.

The closed-form Green kernel of the 1-D problem lives here as well; the
test-suite uses it (through :func:`ddrobin.oracles.quadrature_poisson`) as an
independent check of the tridiagonal path.
"""

from __future__ import annotations

import enum
import functools
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import quad
from scipy.signal import convolve2d

from .grid import Grid1D, Grid2D


class SolverError(RuntimeError):
    """A linear or nonlinear solve failed to produce a usable answer."""


class SignConvention(str, enum.Enum):
    """Sign of the derivative term in the Robin relation ``V +/- A dV/dx = data``."""

    PLUS = "plus"
    MINUS = "minus"

    @property
    def sign(self) -> float:
        return 1.0 if self is SignConvention.PLUS else -1.0


@dataclass(frozen=True)
class RobinPoissonSpec:
    """Data of ``lam V'' = sum_i w_i u_i + zeta`` with Robin conditions.

    The boundary relations are ``V(0) + s*A0*V'(0) = V0`` and
    ``V(1) + s*A1*V'(1) = V1`` with ``s = +1`` for :attr:`SignConvention.PLUS`
    and ``s = -1`` for :attr:`SignConvention.MINUS`.
    """

    A0: float = 0.0
    A1: float = 0.0
    V0: float = 0.0
    V1: float = 0.0
    convention: SignConvention = SignConvention.PLUS
    lam: float = 1.0
    charge_weights: tuple[float, ...] = ()
    background: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "convention", SignConvention(self.convention))
        object.__setattr__(
            self, "charge_weights", tuple(float(w) for w in self.charge_weights)
        )
        if not self.lam > 0:
            raise ValueError(f"lam must be positive, got {self.lam}")

    @property
    def determinant(self) -> float:
        """Wronskian of the homogeneous problem; zero means ill-posed."""
        s = self.convention.sign
        return 1.0 + s * (self.A1 - self.A0)

    def check_well_posed(self):
        if self.determinant == 0.0:
            raise ValueError(
                "degenerate Robin data: 1 + A1 - A0 = 0 (after sign convention)"
            )

    def source(self, densities) -> np.ndarray:
        """Right-hand side ``sum_i w_i u_i + zeta`` on the cells."""
        densities = list(densities)
        if len(self.charge_weights) != len(densities):
            raise ValueError(
                f"{len(self.charge_weights)} charge weights for {len(densities)} species"
            )
        out = np.full(np.shape(densities[0]), self.background, dtype=float)
        for w, u in zip(self.charge_weights, densities):
            out = out + w * np.asarray(u, dtype=float)
        return out


@dataclass(frozen=True)
class PotentialField:
    """Cell values of ``V`` plus its trace and outward normal derivative on the
    boundary faces (ordered as ``grid.boundary_faces()``)."""

    values: np.ndarray
    boundary_trace: np.ndarray
    boundary_normal_derivative: np.ndarray

    def __post_init__(self):
        for name in ("values", "boundary_trace", "boundary_normal_derivative"):
            arr = np.asarray(getattr(self, name), dtype=float)
            if not np.all(np.isfinite(arr)):
                raise SolverError(f"non-finite entries in potential {name}")
            object.__setattr__(self, name, arr)


def zero_potential(grid) -> PotentialField:
    nb = grid.boundary_faces().cell.size
    return PotentialField(np.zeros(grid.shape), np.zeros(nb), np.zeros(nb))


# ---------------------------------------------------------------------------
# 1-D Robin Poisson
# ---------------------------------------------------------------------------


def green_kernel(spec: RobinPoissonSpec, x, y):
    """Green kernel of ``V'' = phi`` with ``V + A_i V' = 0`` at both ends.

    For ``y <= x`` it equals ``(1 + A1 - x)(A0 - y) / (1 + A1 - A0)`` and it is
    symmetric in ``(x, y)``. Only the :attr:`SignConvention.PLUS` form is
    defined here.
    """
    if spec.convention is not SignConvention.PLUS:
        raise ValueError("green_kernel is defined for the PLUS sign convention")
    spec.check_well_posed()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lo = np.minimum(x, y)
    hi = np.maximum(x, y)
    out = (1.0 + spec.A1 - hi) * (spec.A0 - lo) / spec.determinant
    return float(out) if out.ndim == 0 else out


def _robin_banded(spec: RobinPoissonSpec, n: int, h: float) -> np.ndarray:
    """Tridiagonal matrix (LAPACK banded layout) for unknowns
    ``[ghost_L, V_0, ..., V_{n-1}, ghost_R]``; interior rows scaled by h^2/lam."""
    s = spec.convention.sign
    m = n + 2
    ab = np.zeros((3, m))
    # interior rows k = 1..n: V_{k-2} - 2 V_{k-1} + V_k
    ab[0, 2:] = 1.0  # superdiagonal entries (row k, col k+1)
    ab[1, 1:-1] = -2.0
    ab[2, :-2] = 1.0  # subdiagonal entries (row k, col k-1)
    # left Robin row: (1/2 - s A0/h) g + (1/2 + s A0/h) V_0 = V0
    ab[1, 0] = 0.5 - s * spec.A0 / h
    ab[0, 1] = 0.5 + s * spec.A0 / h
    # right Robin row: (1/2 - s A1/h) V_{n-1} + (1/2 + s A1/h) g = V1
    ab[2, m - 2] = 0.5 - s * spec.A1 / h
    ab[1, m - 1] = 0.5 + s * spec.A1 / h
    return ab


def solve_robin_poisson_1d(
    spec: RobinPoissonSpec, rhs, grid: Grid1D | None = None
) -> PotentialField:
    """Solve ``lam V'' = rhs`` on ``grid`` with the Robin data of ``spec``.

    ``rhs`` is the full cell-centered source, already carrying the model's
    sign convention. The returned trace is the ghost average and the normal
    derivative the ghost difference, so both satisfy the Robin relations to
    round-off.
    """
    spec.check_well_posed()
    rhs = np.asarray(rhs, dtype=float)
    if grid is None:
        grid = Grid1D(rhs.size)
    if rhs.shape != grid.shape:
        raise ValueError(f"rhs shape {rhs.shape} does not match grid {grid.shape}")
    if not np.all(np.isfinite(rhs)):
        raise ValueError("rhs contains NaN or inf")
    n, h = grid.n_cells, grid.cell_width
    b = np.empty(n + 2)
    b[0] = spec.V0
    b[1:-1] = rhs * (h * h / spec.lam)
    b[-1] = spec.V1
    try:
        sol = scipy.linalg.solve_banded((1, 1), _robin_banded(spec, n, h), b)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"singular discrete Robin system: {exc}") from exc
    return _robin_field(sol, h)


def _robin_field(sol: np.ndarray, h: float) -> PotentialField:
    v = sol[1:-1]
    trace = np.array([0.5 * (sol[0] + sol[1]), 0.5 * (sol[-2] + sol[-1])])
    # outward: -V'(x_left), +V'(x_right)
    dnu = np.array([-(sol[1] - sol[0]) / h, (sol[-1] - sol[-2]) / h])
    return PotentialField(v.copy(), trace, dnu)


def robin_residual(spec: RobinPoissonSpec, field: PotentialField, rhs, h: float) -> float:
    """Max-norm of ``lam * D2 V - rhs`` using the ghost values implied by
    the stored trace."""
    v = field.values
    g_left = 2.0 * field.boundary_trace[0] - v[0]
    g_right = 2.0 * field.boundary_trace[1] - v[-1]
    ext = np.concatenate([[g_left], v, [g_right]])
    d2 = (ext[:-2] - 2.0 * ext[1:-1] + ext[2:]) / (h * h)
    return float(np.max(np.abs(spec.lam * d2 - np.asarray(rhs))))


@dataclass(frozen=True)
class RobinPoisson1D:
    """``u -> V`` for the 1-D drift-diffusion and corrosion models."""

    spec: RobinPoissonSpec
    grid: Grid1D
    kind: str = field(default="robin-1d", init=False)

    def __call__(self, t: float, densities) -> PotentialField:
        return solve_robin_poisson_1d(self.spec, self.spec.source(densities), self.grid)


# ---------------------------------------------------------------------------
# 2-D mollified Dirichlet Poisson
# ---------------------------------------------------------------------------


def _bump(r2: np.ndarray) -> np.ndarray:
    out = np.zeros_like(r2)
    inside = r2 < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - r2[inside]))
    return out


@functools.lru_cache(maxsize=None)
def bump_mass_2d() -> float:
    """Integral of ``exp(-1/(1-|x|^2))`` over the unit disc."""
    val, _ = quad(lambda r: 2.0 * np.pi * r * np.exp(-1.0 / (1.0 - r * r)), 0.0, 1.0)
    return val


@dataclass(frozen=True)
class MollifierSpec:
    """Scaled bump ``phi_p(x) = p^2 phi(p x)`` with support radius ``1/p``."""

    p: int = 8

    def __post_init__(self):
        if int(self.p) != self.p or self.p < 1:
            raise ValueError(f"mollification index must be a positive integer, got {self.p}")

    @property
    def support_radius(self) -> float:
        return 1.0 / self.p

    def density(self, x, y) -> np.ndarray:
        p = self.p
        r2 = (p * np.asarray(x)) ** 2 + (p * np.asarray(y)) ** 2
        return p * p * _bump(np.asarray(r2, dtype=float)) / bump_mass_2d()

    def weights(self, h_x: float, h_y: float) -> np.ndarray:
        """Discrete kernel on the cell lattice, renormalized to unit sum."""
        rx = int(np.floor(self.support_radius / h_x))
        ry = int(np.floor(self.support_radius / h_y))
        ox = np.arange(-rx, rx + 1) * h_x
        oy = np.arange(-ry, ry + 1) * h_y
        w = self.density(*np.meshgrid(ox, oy, indexing="ij")) * h_x * h_y
        total = w.sum()
        if total <= 0.0:
            # support narrower than one cell: the kernel degenerates to identity
            w = np.zeros((2 * rx + 1, 2 * ry + 1))
            w[rx, ry] = 1.0
            return w
        return w / total


def mollify_extend(u, moll: MollifierSpec, grid: Grid2D) -> np.ndarray:
    """``(E u * phi_p)`` restricted to the grid, by direct convolution so that
    nonnegative input gives exactly nonnegative output."""
    u = np.asarray(u, dtype=float).reshape(grid.shape)
    w = moll.weights(grid.h_x, grid.h_y)
    return convolve2d(u, w, mode="same", boundary="fill", fillvalue=0.0)


def dirichlet_laplacian_2d(grid: Grid2D) -> sp.csr_matrix:
    """5-point Laplacian on cell centers with ``V = 0`` on the boundary faces
    (ghost value ``-V`` across each boundary face)."""

    def lap1d(n, h):
        main = np.full(n, -2.0)
        main[0] = main[-1] = -3.0
        return sp.diags([np.ones(n - 1), main, np.ones(n - 1)], [-1, 0, 1]) / (h * h)

    lx = lap1d(grid.n_x, grid.h_x)
    ly = lap1d(grid.n_y, grid.h_y)
    return (sp.kron(lx, sp.identity(grid.n_y)) + sp.kron(sp.identity(grid.n_x), ly)).tocsc()


class DirichletFactor:
    """LU factor of the Dirichlet Laplacian; read-only after construction."""

    def __init__(self, grid: Grid2D):
        self.grid = grid
        self.matrix = dirichlet_laplacian_2d(grid)
        self.lu = spla.splu(self.matrix)

    def solve(self, b: np.ndarray) -> np.ndarray:
        return self.lu.solve(b)


def dirichlet_normal_derivative(v: np.ndarray, grid: Grid2D) -> np.ndarray:
    """Second-order one-sided outward derivative at each boundary face, using
    ``V = 0`` on the face and the first two cell values inward."""
    v = np.asarray(v).reshape(grid.shape)
    hx, hy = grid.h_x, grid.h_y
    # f'(face) along the inward direction ~ (9 f(h/2) - f(3h/2)) / (3h); outward = minus that
    left = -(9.0 * v[0, :] - v[1, :]) / (3.0 * hx)
    right = -(9.0 * v[-1, :] - v[-2, :]) / (3.0 * hx)
    bottom = -(9.0 * v[:, 0] - v[:, 1]) / (3.0 * hy)
    top = -(9.0 * v[:, -1] - v[:, -2]) / (3.0 * hy)
    return np.concatenate([left, right, bottom, top])


def solve_dirichlet_poisson_2d(
    rhs, grid: Grid2D, tol: float = 1e-10, factor: DirichletFactor | None = None
) -> PotentialField:
    """Solve ``Lap_h V = rhs`` with homogeneous Dirichlet data.

    Uses a sparse LU factorization (deterministic). The discrete residual is
    verified after the solve and a :class:`SolverError` is raised above ``tol``
    (relative to ``max|rhs|``).
    """
    rhs = np.asarray(rhs, dtype=float).reshape(grid.shape)
    if not np.all(np.isfinite(rhs)):
        raise ValueError("rhs contains NaN or inf")
    fac = factor if factor is not None else DirichletFactor(grid)
    b = rhs.ravel()
    v = fac.solve(b)
    res = np.max(np.abs(fac.matrix @ v - b)) if b.size else 0.0
    if res > tol * max(1.0, np.max(np.abs(b))):
        raise SolverError(f"Dirichlet Poisson residual {res:.3e} exceeds {tol:.1e}")
    v = v.reshape(grid.shape)
    nb = 2 * (grid.n_x + grid.n_y)
    return PotentialField(v, np.zeros(nb), dirichlet_normal_derivative(v, grid))


def dirichlet_residual(field: PotentialField, rhs, grid: Grid2D) -> float:
    a = dirichlet_laplacian_2d(grid)
    return float(np.max(np.abs(a @ field.values.ravel() - np.asarray(rhs).ravel())))


@dataclass(frozen=True)
class MollifiedPoisson2D:
    """``u -> Lap_D^{-1} (E (sum_i w_i u_i) * phi_p)``; self-gravitation uses a
    single species with weight 1."""

    grid: Grid2D
    mollifier: MollifierSpec
    charge_weights: tuple[float, ...] = (1.0,)
    kind: str = field(default="mollified-2d", init=False)
    factor: DirichletFactor = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "factor", DirichletFactor(self.grid))

    def __call__(self, t: float, densities) -> PotentialField:
        densities = list(densities)
        total = np.zeros(self.grid.shape)
        for w, u in zip(self.charge_weights, densities):
            total = total + w * np.asarray(u, dtype=float).reshape(self.grid.shape)
        return solve_dirichlet_poisson_2d(
            mollify_extend(total, self.mollifier, self.grid), self.grid, factor=self.factor
        )


@dataclass(frozen=True)
class NoPotential:
    grid: Grid1D | Grid2D
    kind: str = field(default="none", init=False)

    def __call__(self, t: float, densities) -> PotentialField:
        return zero_potential(self.grid)


def apply_potential_operator(model_kind: str, densities, spec, grid, t: float = 0.0) -> PotentialField:
    """Dispatch ``V = B(t, u)`` by operator kind.

    ``spec`` is a :class:`RobinPoissonSpec` for ``"robin-1d"`` and a
    :class:`MollifierSpec` for ``"mollified-2d"``; it is ignored for ``"none"``.
    """
    densities = [np.asarray(u, dtype=float) for u in densities]
    for u in densities:
        if not np.all(np.isfinite(u)):
            raise ValueError("densities contain NaN or inf")
    if model_kind == "robin-1d":
        return RobinPoisson1D(spec, grid)(t, densities)
    if model_kind == "mollified-2d":
        return MollifiedPoisson2D(grid, spec, (1.0,) * len(densities))(t, densities)
    if model_kind == "none":
        return zero_potential(grid)
    raise ValueError(f"unknown potential operator kind {model_kind!r}")


def w1inf_norm(field: PotentialField, grid) -> float:
    """``max|V| + max|grad V|`` over cells, interior faces and boundary faces."""
    faces = grid.interior_faces()
    v = field.values.ravel()
    grad = np.abs(v[faces.right] - v[faces.left]) / faces.spacing
    gmax = max(
        float(grad.max(initial=0.0)),
        float(np.abs(field.boundary_normal_derivative).max(initial=0.0)),
    )
    vmax = max(float(np.abs(v).max()), float(np.abs(field.boundary_trace).max(initial=0.0)))
    return vmax + gmax


def lipschitz_ratio(operator, grid, pairs) -> float:
    """Largest ``||B(u) - B(w)||_{W^{1,inf}} / ||u - w||_{L^1}`` over ``pairs``.

    Each pair is ``(u, w)`` where ``u`` and ``w`` are lists of species fields.
    """
    worst = 0.0
    for u, w in pairs:
        fu = operator(0.0, u)
        fw = operator(0.0, w)
        diff = PotentialField(
            fu.values - fw.values,
            fu.boundary_trace - fw.boundary_trace,
            fu.boundary_normal_derivative - fw.boundary_normal_derivative,
        )
        l1 = sum(float(np.sum(np.abs(np.asarray(a) - np.asarray(b)))) for a, b in zip(u, w))
        l1 *= grid.cell_volume
        if l1 > 0.0:
            worst = max(worst, w1inf_norm(diff, grid) / l1)
    return worst
