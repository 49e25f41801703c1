import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ddrobin.grid import Grid1D, Grid2D
from ddrobin.potential import (
    MollifiedPoisson2D,
    MollifierSpec,
    NoPotential,
    RobinPoisson1D,
    RobinPoissonSpec,
    SolverError,
    apply_potential_operator,
    dirichlet_residual,
    green_kernel,
    lipschitz_ratio,
    mollify_extend,
    robin_residual,
    solve_dirichlet_poisson_2d,
    solve_robin_poisson_1d,
    w1inf_norm,
)
from ddrobin.presets import build_corrosion, build_model
from ddrobin.studies import robin_poisson_order


def test_green_kernel_value():
    spec = RobinPoissonSpec(A0=-1.0, A1=1.0)
    assert green_kernel(spec, 0.5, 0.25) == pytest.approx(-0.625, abs=1e-15)


def test_green_kernel_vanishes():
    spec = RobinPoissonSpec(A0=0.0, A1=0.0)
    assert green_kernel(spec, 1.0, np.linspace(0, 1, 7)) == pytest.approx(np.zeros(7), abs=0)


@given(
    st.floats(-2, 2), st.floats(-2, 2), st.floats(0, 1), st.floats(0, 1),
)
def test_green_kernel_symmetric(a0, a1, x, y):
    if abs(1 + a1 - a0) < 1e-3:
        return
    spec = RobinPoissonSpec(A0=a0, A1=a1)
    assert green_kernel(spec, x, y) == green_kernel(spec, y, x)


def test_green_kernel_minus_convention_rejected():
    with pytest.raises(ValueError):
        green_kernel(RobinPoissonSpec(convention="minus"), 0.1, 0.2)


def test_degenerate_spec():
    spec = RobinPoissonSpec(A0=1.0, A1=0.0)
    with pytest.raises(ValueError):
        spec.check_well_posed()
    with pytest.raises(ValueError):
        solve_robin_poisson_1d(spec, np.zeros(8))
    with pytest.raises(ValueError):
        green_kernel(spec, 0.2, 0.3)


def test_linear_reproduced():
    spec = RobinPoissonSpec(A0=0.0, A1=0.0, V0=1.0, V1=3.0)
    g = Grid1D(16)
    field = solve_robin_poisson_1d(spec, np.zeros(16), g)
    np.testing.assert_allclose(field.values, 1 + 2 * g.cell_centers, atol=1e-13)
    np.testing.assert_allclose(field.boundary_trace, [1.0, 3.0], atol=1e-13)
    # outward derivative: -V'(0), +V'(1)
    np.testing.assert_allclose(field.boundary_normal_derivative, [-2.0, 2.0], atol=1e-12)


@pytest.mark.parametrize("convention", ["plus", "minus"])
def test_manufactured_second_order(convention):
    study = robin_poisson_order([16, 32, 64, 128], convention=convention)
    assert study.order >= 1.8
    assert study.errors[-1] < 1e-4


@pytest.mark.parametrize("convention", ["plus", "minus"])
def test_residual_small(convention):
    rng = np.random.default_rng(1)
    spec = RobinPoissonSpec(A0=0.3, A1=0.2, V0=1.0, V1=-1.0, convention=convention, lam=2.0)
    rhs = rng.normal(size=40)
    field = solve_robin_poisson_1d(spec, rhs)
    assert robin_residual(spec, field, rhs, 1 / 40) < 1e-10


def test_corrosion_zero_density_affine():
    cfg = build_corrosion({"u0": [0.0, 0.0, 0.0], "zeta": 0.0, "dV0": 0.2, "Psi": 1.0, "dV1": 0.1}, resolution=32)
    model = build_model(cfg)
    spec = model.potential.spec
    field = apply_potential_operator("robin-1d", [np.zeros(32)] * 3, spec, model.grid)
    x = model.grid.cell_centers
    # V - A0 V' = dV0, V - A1 V' = Psi - dV1 with V affine
    slope = np.diff(field.values)[0] / model.grid.cell_width
    np.testing.assert_allclose(np.diff(field.values) / model.grid.cell_width, slope, atol=1e-12)
    v_at = lambda s: field.values[0] + slope * (s - x[0])
    assert v_at(0.0) - spec.A0 * slope == pytest.approx(0.2, abs=1e-12)
    assert v_at(1.0) - spec.A1 * slope == pytest.approx(0.9, abs=1e-12)


def test_self_grav_zero_density():
    g = Grid2D(12, 12)
    op = MollifiedPoisson2D(g, MollifierSpec(4))
    field = op(0.0, [np.zeros(g.shape)])
    assert np.all(field.values == 0)
    assert np.all(apply_potential_operator("mollified-2d", [np.zeros(g.shape)], op.mollifier, g).values == 0)
    assert np.all(apply_potential_operator("none", [np.ones(g.shape)], None, g).values == 0)


def test_unknown_operator():
    with pytest.raises(ValueError):
        apply_potential_operator("nope", [np.zeros(4)], None, Grid1D(4))


def test_mollify_zero_and_nonnegative():
    g = Grid2D(20, 20)
    rng = np.random.default_rng(3)
    m = MollifierSpec(5)
    assert np.all(mollify_extend(np.zeros(g.shape), m, g) == 0)
    for _ in range(10):
        u = rng.random(g.shape) * (rng.random(g.shape) < 0.3)
        assert np.all(mollify_extend(u, m, g) >= 0)


def test_mollify_point_mass_support():
    g = Grid2D(41, 41)
    m = MollifierSpec(10)
    u = np.zeros(g.shape)
    u[20, 20] = 1.0 / g.cell_volume
    out = mollify_extend(u, m, g)
    X, Y = g.meshgrid()
    r = np.hypot(X - 0.5, Y - 0.5)
    assert np.all(out[r > m.support_radius + 1e-12] == 0)
    assert out.sum() * g.cell_volume == pytest.approx(1.0, rel=1e-12)


def test_mollifier_p_must_be_positive():
    with pytest.raises(ValueError):
        MollifierSpec(0)


def test_dirichlet_zero_rhs():
    g = Grid2D(10, 10)
    assert np.all(solve_dirichlet_poisson_2d(np.zeros(g.shape), g).values == 0)


def test_dirichlet_manufactured_order():
    errs = []
    for n in (16, 32, 64):
        g = Grid2D(n, n)
        X, Y = g.meshgrid()
        exact = X * (1 - X) * Y * (1 - Y)
        rhs = -2 * Y * (1 - Y) - 2 * X * (1 - X)
        field = solve_dirichlet_poisson_2d(rhs, g)
        assert dirichlet_residual(field, rhs, g) < 1e-9
        errs.append(np.max(np.abs(field.values - exact)))
    order = np.polyfit(np.log([1 / 16, 1 / 32, 1 / 64]), np.log(errs), 1)[0]
    assert order >= 1.8


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6))
def test_dirichlet_sign_property(seed):
    g = Grid2D(16, 16)
    rhs = np.random.default_rng(seed).random(g.shape)
    field = solve_dirichlet_poisson_2d(rhs, g)
    assert np.all(field.values <= 0)
    assert np.min(field.boundary_normal_derivative) >= -1e-8


def test_nonfinite_rejected():
    with pytest.raises(ValueError):
        solve_robin_poisson_1d(RobinPoissonSpec(), np.array([np.nan, 1.0, 2.0]))


def test_nonfinite_field_rejected():
    from ddrobin.potential import PotentialField

    with pytest.raises(SolverError):
        PotentialField(np.array([np.inf, 0.0]), np.zeros(2), np.zeros(2))


def test_lipschitz_and_norms():
    g = Grid1D(32)
    op = RobinPoisson1D(RobinPoissonSpec(A0=0.1, A1=0.1, charge_weights=(1.0,)), g)
    rng = np.random.default_rng(0)
    pairs = [([rng.random(32)], [rng.random(32)]) for _ in range(5)]
    ratio = lipschitz_ratio(op, g, pairs)
    assert 0 < ratio < 10
    assert w1inf_norm(op(0.0, [np.ones(32)]), g) > 0
    assert np.all(NoPotential(g)(0.0, [np.ones(32)]).values == 0)
