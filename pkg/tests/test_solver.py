import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from conftest import constant_flux, heat_model
from ddrobin.config import RunConfig
from ddrobin.diagnostics import Flag
from ddrobin.flux import corrosion_value, zero_flux
from ddrobin.grid import Grid1D, Grid2D
from ddrobin.oracles import heat_neumann_analytic
from ddrobin.potential import RobinPoisson1D, RobinPoissonSpec
from ddrobin.presets import CORROSION_GAMMA, build_corrosion, build_model, build_self_grav
from ddrobin.solver import (
    Model,
    PicardError,
    PositivityError,
    SimulationError,
    SpeciesSpec,
    StepParams,
    assemble_step,
    bernoulli,
    boundary_flux_integral,
    initial_state,
    mass_budget,
    run_simulation,
    sg_face_flux,
    simulate,
)


@pytest.mark.parametrize(
    "ul, ur, dv, h, expected",
    [(2.0, 2.0, 0.0, 0.5, 0.0), (1.0, 0.0, 0.0, 1.0, 1.0)],
)
def test_sg_examples(ul, ur, dv, h, expected):
    assert sg_face_flux(ul, ur, dv, h) == expected


def test_bernoulli_at_zero_and_symmetry():
    assert bernoulli(0.0) == 1.0
    z = np.array([-30.0, -1e-9, 1e-9, 0.3, 30.0])
    np.testing.assert_allclose(bernoulli(-z) - bernoulli(z), z, rtol=1e-12, atol=1e-15)


@given(st.floats(-3, 3), st.floats(0.1, 4), st.floats(0.2, 3))
def test_sg_exact_on_equilibrium(alpha, eta, slope):
    g = Grid1D(20)
    v = slope * np.sin(2 * g.cell_centers)
    u = np.exp(-alpha * v / eta)
    F = sg_face_flux(u[:-1], u[1:], np.diff(v), g.cell_width, alpha, eta)
    assert np.max(np.abs(F)) <= 1e-12 * max(1.0, np.max(u))


def test_constant_state_is_stationary():
    model = heat_model(u0=np.full(32, 2.5))
    traj = simulate(model, StepParams(0.05), 1.0)
    for s, _ in traj:
        np.testing.assert_allclose(s.densities[0], 2.5, rtol=1e-13)


def test_heat_decay_matches_analytic():
    n, dt, T = 64, 1e-4, 0.1
    model = heat_model(n)
    final = simulate(model, StepParams(dt), T, cadence=10**6)[-1][0]
    exact = heat_neumann_analytic(model.grid.cell_centers, T, (1.0, 1.0))
    err = np.max(np.abs(final.densities[0] - exact))
    assert err < 5.0 * (1 / n) ** 2


def test_zero_flux_mass_conserved():
    model = heat_model(64)
    traj = simulate(model, StepParams(0.01), 1.0)
    masses = [r.species[0].mass for _, r in traj]
    assert max(abs(m - masses[0]) for m in masses) <= 1e-12
    l2 = [r.species[0].l2_norm for _, r in traj]
    assert all(b <= a + 1e-15 for a, b in zip(l2, l2[1:]))


@pytest.mark.parametrize("tau", [1.0, 0.1, 10.0])
def test_constant_inflow_mass_growth(tau):
    c, dt = 0.7, 0.02
    model = heat_model(16, flux=constant_flux(c), time_scale=tau)
    s0 = initial_state(model)
    s1 = assemble_step(s0, model, StepParams(dt))
    m0 = model.grid.cell_volume * s0.densities[0].sum()
    m1 = model.grid.cell_volume * s1.densities[0].sum()
    assert m1 - m0 == pytest.approx(2 * c * dt / tau, rel=1e-12)
    flux = boundary_flux_integral(s1, model.grid, 0)
    assert flux == pytest.approx(2 * c)
    assert abs(mass_budget(s0, s1, flux, dt, model.grid, 0, tau)) < 1e-14


def equilibrium_config(c=0.3, n=32):
    """Constant densities at the boundary roots of sigma with V constant."""
    psi = c
    u0 = []
    for g in CORROSION_GAMMA:
        from ddrobin.flux import CorrosionFluxParams

        p = CorrosionFluxParams(m=1.0, k=1.0, a=0.5, b=0.5, u_max=1.0, gamma=g)
        u0.append(brentq(lambda v: corrosion_value(p, v, psi), 0.0, 1.0, xtol=1e-15))
    zeta = -sum(g * u for g, u in zip(CORROSION_GAMMA, u0))
    params = {"Psi": 2 * c, "dV0": c, "dV1": c, "zeta": zeta, "u0": u0}
    return build_corrosion(params, resolution=n, T=0.5, dt=0.05), u0


def test_corrosion_equilibrium_is_stationary():
    cfg, u0 = equilibrium_config()
    model = build_model(cfg)
    s0 = initial_state(model)
    np.testing.assert_allclose(s0.potential.values, 0.3, atol=1e-12)
    traj = simulate(model, StepParams(cfg.dt, cfg.picard_tol), cfg.T)
    for s, r in traj:
        for u, ref in zip(s.densities, u0):
            assert np.max(np.abs(u - ref)) <= 10 * cfg.picard_tol
        assert r.passed


def test_corrosion_run_passes():
    cfg = build_corrosion({"epsilon": 0.2, "Psi": 0.7, "dV0": -0.3, "dV1": 1.1}, resolution=64, T=1.0, dt=0.02)
    traj = run_simulation(cfg)
    for s, r in traj:
        assert r.passed, r.flags
        assert min(u.min() for u in s.densities) >= -1e-12
        assert abs(r.mass_budget_residual) <= 1e-10 * (1 + sum(x.mass for x in r.species))
    masses = [r.species[1].mass for _, r in traj]
    assert max(masses) - min(masses) > 1e-3  # mass actually moves


def test_self_grav_step_conserves_mass():
    cfg = build_self_grav({"gn_constant": 0.43}, resolution=[16, 16], T=0.05, dt=0.01)
    traj = run_simulation(cfg)
    m = [r.species[0].mass for _, r in traj]
    assert max(abs(x - m[0]) for x in m) < 1e-12
    assert all(r.passed for _, r in traj)


def test_deterministic():
    cfg = build_corrosion({"Psi": 0.4}, resolution=32, T=0.2, dt=0.02)
    a = run_simulation(cfg)
    b = run_simulation(cfg)
    for (sa, ra), (sb, rb) in zip(a, b):
        for x, y in zip(sa.densities, sb.densities):
            assert np.array_equal(x, y)
        assert ra == rb


def test_picard_failure_raises():
    cfg = build_corrosion({"Psi": 0.4}, resolution=32, T=0.1, dt=0.05)
    model = build_model(cfg)
    with pytest.raises(PicardError) as exc:
        assemble_step(initial_state(model), model, StepParams(0.05, picard_max_iter=1))
    assert exc.value.state is not None
    with pytest.raises(SimulationError) as sim:
        simulate(model, StepParams(0.05, picard_max_iter=1), 0.1)
    assert Flag.PICARD_FAIL in sim.value.trajectory[-1][1].flags


def test_outflow_below_zero_detected():
    model = heat_model(16, u0=np.full(16, 0.01), flux=constant_flux(-1.0))
    with pytest.raises(SimulationError) as exc:
        simulate(model, StepParams(0.01), 1.0)
    assert isinstance(exc.value.cause, PositivityError)
    traj = exc.value.trajectory
    assert Flag.NEGATIVITY in traj[-1][1].flags
    assert all(min(u.min() for u in s.densities) >= -1e-12 for s, _ in traj[:-1])


def test_species_validation():
    g = Grid1D(4)
    with pytest.raises(ValueError):
        SpeciesSpec("u", 0.0, zero_flux(), np.array([1.0, -0.1, 0.0, 0.0]))
    with pytest.raises(ValueError):
        SpeciesSpec("u", 0.0, zero_flux(), np.ones(4), diffusion=0.0)
    with pytest.raises(ValueError):
        SpeciesSpec("u", 0.0, zero_flux(), np.ones(4), time_scale=-1.0)
    with pytest.raises(ValueError):
        Model(g, [SpeciesSpec("u", 0.0, zero_flux(), np.ones(5))])


@pytest.mark.parametrize("kw", [{"dt": 0.0}, {"dt": 0.1, "picard_tol": 0.0}, {"dt": 0.1, "picard_max_iter": 0}, {"dt": 0.1, "theta": 0.5}])
def test_step_params_validation(kw):
    with pytest.raises(ValueError):
        StepParams(**kw)


@settings(max_examples=15, deadline=None)
@given(
    st.floats(0.001, 0.2), st.integers(8, 64), st.floats(-2, 2), st.floats(0.05, 1.0),
)
def test_positivity_random_corrosion(dt, n, psi, eps):
    cfg = build_corrosion(
        {"epsilon": eps, "Psi": psi, "u0": [{"kind": "cosine", "mean": 0.5, "amplitude": 0.5, "mode": 3}, 0.0, 1.0]},
        resolution=n, T=5 * dt, dt=dt,
    )
    for s, r in run_simulation(cfg):
        assert min(u.min() for u in s.densities) >= -1e-12
        assert r.passed


def test_drift_only_potential():
    g = Grid1D(32)
    spec = RobinPoissonSpec(A0=0.0, A1=0.0, V0=0.0, V1=2.0, charge_weights=(0.0,))
    sp = SpeciesSpec("u", 1.0, zero_flux(), np.ones(32))
    model = Model(g, [sp], RobinPoisson1D(spec, g))
    final = simulate(model, StepParams(0.05), 5.0, cadence=1000)[-1][0]
    # relaxes to the Boltzmann profile exp(-V) with the initial mass
    v = final.potential.values
    prof = np.exp(-v)
    prof *= g.cell_width * 32 / (g.cell_width * prof.sum())
    assert np.max(np.abs(final.densities[0] - prof)) < 1e-4
