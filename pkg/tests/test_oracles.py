import numpy as np
import pytest

from conftest import constant_flux
from ddrobin.flux import zero_flux
from ddrobin.grid import Grid1D
from ddrobin.oracles import dense_newton_step, heat_neumann_analytic, quadrature_poisson
from ddrobin.potential import RobinPoisson1D, RobinPoissonSpec, green_kernel, solve_robin_poisson_1d
from ddrobin.presets import build_corrosion, build_model
from ddrobin.solver import Model, SpeciesSpec, StepParams, assemble_step, initial_state


def test_newton_matches_picard_corrosion():
    cfg = build_corrosion({"Psi": 0.8, "dV1": -0.2, "epsilon": 0.3}, resolution=16)
    model = build_model(cfg)
    s0 = initial_state(model)
    s1 = assemble_step(s0, model, StepParams(0.05))
    u, v, _ = dense_newton_step(s0, model, 0.05)
    assert max(np.max(np.abs(a - b)) for a, b in zip(u, s1.densities)) <= 1e-9
    assert np.max(np.abs(v.values - s1.potential.values)) <= 1e-9


def _linear_model(n, flux):
    g = Grid1D(n)
    spec = RobinPoissonSpec(charge_weights=(0.0,))
    sp = SpeciesSpec("u", 0.0, flux, 1.0 + np.cos(np.pi * g.cell_centers))
    return Model(g, [sp], RobinPoisson1D(spec, g))


def test_newton_zero_flux_matches_direct():
    model = _linear_model(24, zero_flux())
    s0 = initial_state(model)
    dt = 0.01
    u, _, _ = dense_newton_step(s0, model, dt)
    n, h = 24, 1 / 24
    A = np.diag(np.full(n, 1 + 2 * dt / h**2)) - np.diag(np.full(n - 1, dt / h**2), 1) - np.diag(np.full(n - 1, dt / h**2), -1)
    A[0, 0] -= dt / h**2
    A[-1, -1] -= dt / h**2
    direct = np.linalg.solve(A, s0.densities[0])
    assert np.max(np.abs(u[0] - direct)) <= 1e-12


def test_newton_linear_one_iteration():
    model = _linear_model(16, constant_flux(0.3))
    _, _, iterations = dense_newton_step(initial_state(model), model, 0.02, tol=1e-10)
    assert iterations == 1


def test_newton_limits():
    model = _linear_model(40, zero_flux())
    with pytest.raises(ValueError):
        dense_newton_step(initial_state(model), model, 0.01)


def test_quadrature_affine():
    spec = RobinPoissonSpec(A0=0.2, A1=-0.1, V0=1.0, V1=-2.0)
    g = Grid1D(20)
    field = quadrature_poisson(spec, np.zeros(20), g)
    x = g.cell_centers
    expected = (x - 0.2) / (1 - 0.1 - 0.2) * (-3.0) + 1.0
    np.testing.assert_allclose(field.values, expected, atol=1e-14)


def test_quadrature_matches_tridiagonal():
    spec = RobinPoissonSpec(A0=0.3, A1=0.5, V0=0.5, V1=1.5)
    for n in (16, 32, 64):
        g = Grid1D(n)
        rhs = np.exp(g.cell_centers) * np.sin(3 * g.cell_centers)
        a = quadrature_poisson(spec, rhs, g)
        b = solve_robin_poisson_1d(spec, rhs, g)
        assert np.max(np.abs(a.values - b.values)) <= (1 / n) ** 2


def test_quadrature_impulse_is_kernel_column():
    spec = RobinPoissonSpec(A0=-0.4, A1=0.7)
    g = Grid1D(32)
    x = g.cell_centers
    cols = []
    for j in (5, 20):
        rhs = np.zeros(32)
        rhs[j] = 1.0 / g.cell_width
        cols.append(quadrature_poisson(spec, rhs, g).values)
        np.testing.assert_allclose(cols[-1], green_kernel(spec, x, x[j]), atol=1e-15)
    assert cols[0][20] == cols[1][5]


def test_heat_analytic():
    x = np.linspace(0, 1, 11)
    np.testing.assert_allclose(heat_neumann_analytic(x, 0.0, (1.0, 0.5, 0.25)),
                               1.0 + 0.5 * np.cos(np.pi * x) + 0.25 * np.cos(2 * np.pi * x))
    np.testing.assert_allclose(heat_neumann_analytic(x, 50.0, (0.7, 1.0, 2.0)), 0.7)
