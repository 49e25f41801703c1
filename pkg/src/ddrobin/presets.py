"""
Model presets: corrosion (1-D, three species), self-gravitation (2-D, one
species) and a generic n-species drift system with measure-type fluxes.

Each ``build_*`` function fills in defaults, validates the parameter block
(including a non-dissipation sampler run on every flux) and returns a
:class:`~ddrobin.config.RunConfig`. :func:`build_model` turns a config into
a :class:`~ddrobin.solver.Model`.
"""

from __future__ import annotations

import copy

import numpy as np

from .config import ConfigError, RunConfig
from .diagnostics import estimate_gn_constant, smallness_threshold
from .flux import (
    CorrosionFluxParams,
    MeasureAtomList,
    check_bounded_nondissipative,
    corrosion_flux,
    measure_drift_flux,
    zero_flux,
)
from .grid import Grid1D, Grid2D, build_grid_1d, build_grid_2d, cell_integral
from .potential import MollifiedPoisson2D, MollifierSpec, RobinPoisson1D, RobinPoissonSpec
from .solver import Model, SpeciesSpec

CORROSION_GAMMA = (-1, 3, 1)

PARAMETER_SCHEMA = {
    "corrosion": {
        "epsilon": "float > 0, time-scale parameter; species i is advanced with tau = epsilon^(2-i)",
        "lam": "float > 0, coefficient of -V'' in the Poisson equation",
        "zeta": "float, background charge density",
        "Psi": "float, applied potential (enters the x=1 flux argument and Robin data)",
        "dV0": "float, voltage drop at x=0",
        "dV1": "float, voltage drop at x=1",
        "A0": "float, Robin coefficient at x=0 in V - A0 V' = dV0",
        "A1": "float, Robin coefficient at x=1 in V - A1 V' = Psi - dV1",
        "flux": "mapping {m, k, a, b, u_max} shared by all species and both ends, or a list "
        "of 3 mappings (one per species), each either flat or {left: {...}, right: {...}}",
        "u0": "list of 3 initial conditions (number | list of cell values | {kind: cosine, "
        "mean, amplitude, mode} | {kind: gaussian, mass, center, width})",
    },
    "self-grav": {
        "p": "int >= 1, mollification index (kernel support radius 1/p)",
        "domain": "[x0, x1, y0, y1], rectangle",
        "u0": "initial density (number | nested list | {kind: gaussian, mass, center, width})",
        "gn_constant": "float > 0, Gagliardo-Nirenberg constant; measured on a 64x64 grid "
        "with the config seed when absent",
    },
    "generic-drift": {
        "interval": "[a, b], support of the atomic measures (default [0, 1])",
        "potential": "mapping {A0, A1, V0, V1, lam, beta (list), zeta}; V'' = (sum beta u + zeta)/lam "
        "with V + A_i V' = V_i",
        "species": "list of mappings {alpha, diffusion, time_scale, u0, atoms: {locations, weights}, "
        "f: {kind: const|exp, c, kappa}, g: {kind: linear|power, R, q}}",
    },
}


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _num(params, key, default, errors, positive=False):
    val = params.get(key, default)
    try:
        val = float(val)
    except (TypeError, ValueError):
        errors.append(f"{key} must be a number (got {val!r})")
        return default
    if not np.isfinite(val):
        errors.append(f"{key} must be finite")
    elif positive and not val > 0:
        errors.append(f"{key} must be > 0 (got {val})")
    return val


def initial_field(spec, grid, errors: list, label: str = "u0") -> np.ndarray:
    """Materialize an initial-condition description on ``grid``."""
    if isinstance(spec, (int, float)):
        u = np.full(grid.shape, float(spec))
    elif isinstance(spec, (list, tuple, np.ndarray)):
        u = np.asarray(spec, dtype=float)
        if u.size != grid.size:
            errors.append(f"{label}: {u.size} values for {grid.size} cells")
            return np.zeros(grid.shape)
        u = u.reshape(grid.shape)
    elif isinstance(spec, dict):
        kind = spec.get("kind")
        if kind == "cosine" and isinstance(grid, Grid1D):
            x = (grid.cell_centers - grid.x_left) / (grid.x_right - grid.x_left)
            u = float(spec.get("mean", 1.0)) + float(spec.get("amplitude", 0.0)) * np.cos(
                float(spec.get("mode", 1)) * np.pi * x
            )
        elif kind == "gaussian":
            width = float(spec.get("width", 0.1))
            mass = float(spec.get("mass", 1.0))
            if isinstance(grid, Grid1D):
                c = float(spec.get("center", 0.5))
                u = np.exp(-((grid.cell_centers - c) ** 2) / (2 * width**2))
            else:
                cx, cy = spec.get("center", (0.5, 0.5))
                X, Y = grid.meshgrid()
                u = np.exp(-((X - cx) ** 2 + (Y - cy) ** 2) / (2 * width**2))
            u = mass * u / cell_integral(grid, u)
        else:
            errors.append(f"{label}: unknown initial condition kind {kind!r}")
            return np.zeros(grid.shape)
    else:
        errors.append(f"{label}: unsupported initial condition {spec!r}")
        return np.zeros(grid.shape)
    if not np.all(np.isfinite(u)):
        errors.append(f"{label}: non-finite values")
    elif np.any(u < 0):
        errors.append(f"{label}: negative initial density (min {float(u.min()):.3g})")
    return u


def _raise(errors):
    if errors:
        raise ConfigError("; ".join(errors))


def _run_config(preset, params, run):
    try:
        return RunConfig(preset=preset, params=params, **run)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def _check_fluxes(model: Model, seed: int, points, errors):
    for s in model.species:
        rep = check_bounded_nondissipative(s.flux, 2048, points=points, seed=seed)
        if not rep.passed:
            w = rep.witness
            errors.append(
                f"{s.name}: flux violates non-dissipation ({w.condition}) at "
                f"t={w.t:.3g}, x={w.x}, v={w.v:.6g}, psi={w.psi:.3g}, sigma={w.sigma:.6g}"
            )


# ---------------------------------------------------------------------------
# corrosion
# ---------------------------------------------------------------------------

CORROSION_DEFAULTS = {
    "epsilon": 0.1,
    "lam": 1.0,
    "zeta": 0.0,
    "Psi": 0.0,
    "dV0": 0.0,
    "dV1": 0.0,
    "A0": 0.1,
    "A1": 0.1,
    "flux": {"m": 1.0, "k": 1.0, "a": 0.5, "b": 0.5, "u_max": 1.0},
    "u0": [0.5, 0.5, 0.5],
}


def _corrosion_flux_params(block, gamma, errors, label):
    def one(d, side):
        try:
            return CorrosionFluxParams(
                m=float(d.get("m", 1.0)), k=float(d.get("k", 1.0)),
                a=float(d.get("a", 0.5)), b=float(d.get("b", 0.5)),
                u_max=float(d.get("u_max", 1.0)), gamma=gamma,
            )
        except (TypeError, ValueError, AttributeError):
            errors.append(f"{label}.{side}: malformed flux parameters {d!r}")
            return CorrosionFluxParams(gamma=gamma)

    if not isinstance(block, dict):
        errors.append(f"{label}: flux parameters must be a mapping")
        return CorrosionFluxParams(gamma=gamma), CorrosionFluxParams(gamma=gamma)
    if "left" in block or "right" in block:
        left = one(block.get("left", {}), "left")
        right = one(block.get("right", block.get("left", {})), "right")
    else:
        left = right = one(block, "both")
    for side, p in (("left", left), ("right", right)):
        errors.extend(f"{label}.{side}: {e}" for e in p.validate())
    return left, right


def _corrosion_model(params: dict, grid: Grid1D, errors: list) -> Model:
    eps = _num(params, "epsilon", 0.1, errors, positive=True)
    lam = _num(params, "lam", 1.0, errors, positive=True)
    zeta = _num(params, "zeta", 0.0, errors)
    psi_applied = _num(params, "Psi", 0.0, errors)
    dv0 = _num(params, "dV0", 0.0, errors)
    dv1 = _num(params, "dV1", 0.0, errors)
    a0 = _num(params, "A0", 0.1, errors)
    a1 = _num(params, "A1", 0.1, errors)
    flux_block = params.get("flux", CORROSION_DEFAULTS["flux"])
    flux_blocks = flux_block if isinstance(flux_block, list) else [flux_block] * 3
    if len(flux_blocks) != 3:
        errors.append(f"flux: expected 3 species blocks, got {len(flux_blocks)}")
        flux_blocks = [{}] * 3
    u0s = params.get("u0", CORROSION_DEFAULTS["u0"])
    if not isinstance(u0s, list) or len(u0s) != 3:
        errors.append("u0: expected a list of 3 initial conditions")
        u0s = [0.0] * 3

    try:
        spec = RobinPoissonSpec(
            A0=a0, A1=a1, V0=dv0, V1=psi_applied - dv1, convention="minus",
            lam=lam if lam > 0 else 1.0,
            charge_weights=tuple(-g for g in CORROSION_GAMMA), background=-zeta,
        )
        spec.check_well_posed()
    except ValueError as exc:
        errors.append(f"Poisson data: {exc}")
        spec = RobinPoissonSpec(convention="minus", charge_weights=(1.0, -3.0, -1.0))

    species = []
    eps_safe = eps if eps > 0 else 1.0
    for i, gamma in enumerate(CORROSION_GAMMA):
        left, right = _corrosion_flux_params(flux_blocks[i], gamma, errors, f"flux[{i}]")
        try:
            flux = corrosion_flux(left, right)
        except ValueError:
            flux = zero_flux()
        u0 = initial_field(u0s[i], grid, errors, f"u0[{i}]")
        species.append(
            SpeciesSpec(
                name=f"u{i + 1}", alpha=float(gamma), flux=flux,
                initial_condition=np.maximum(u0, 0.0),
                time_scale=eps_safe ** (2 - (i + 1)),
            )
        )
    return Model(
        grid, species, RobinPoisson1D(spec, grid),
        psi_scale=np.array([1.0, -1.0]), psi_offset=np.array([0.0, psi_applied]),
        name="corrosion",
    )


def build_corrosion(params: dict | None = None, **run) -> RunConfig:
    """Corrosion model with charges ``gamma = (-1, 3, 1)``.

    Poisson: ``-lam V'' = sum gamma_i u_i + zeta`` with
    ``V - A0 V' = dV0`` at 0 and ``V - A1 V' = Psi - dV1`` at 1; the flux
    argument is ``V`` at 0 and ``Psi - V`` at 1.
    """
    full = copy.deepcopy(CORROSION_DEFAULTS)
    full.update(copy.deepcopy(params or {}))
    run.setdefault("resolution", 128)
    config = _run_config("corrosion", full, run)
    build_model(config)
    return config


# ---------------------------------------------------------------------------
# self-gravitation
# ---------------------------------------------------------------------------

SELF_GRAV_DEFAULTS = {
    "p": 8,
    "domain": [0.0, 1.0, 0.0, 1.0],
    "u0": {"kind": "gaussian", "mass": 0.5, "center": [0.5, 0.5], "width": 0.1},
}


def _self_grav_model(params, grid: Grid2D, errors) -> Model:
    p = params.get("p", 8)
    try:
        moll = MollifierSpec(int(p) if float(p) == int(p) else p)
    except (ValueError, TypeError):
        errors.append(f"p must be a positive integer (got {p!r})")
        moll = MollifierSpec(8)
    u0 = initial_field(params.get("u0", SELF_GRAV_DEFAULTS["u0"]), grid, errors)
    flux = zero_flux(height=0.0)
    sp = SpeciesSpec("u", alpha=1.0, flux=flux, initial_condition=np.maximum(u0, 0.0))
    return Model(grid, [sp], MollifiedPoisson2D(grid, moll, (1.0,)), name="self-grav")


def build_self_grav(params: dict | None = None, **run) -> RunConfig:
    """Self-gravitating particles on a rectangle: ``Lap V = phi_p * u``,
    ``V = 0`` on the boundary, zero total flux, drift coefficient ``+1``.

    When ``gn_constant`` is not supplied it is measured (seeded) and stored in
    the returned parameters, so the small-data verdict of
    :func:`small_data_report` is reproducible from the config alone.
    """
    full = copy.deepcopy(SELF_GRAV_DEFAULTS)
    full.update(copy.deepcopy(params or {}))
    run.setdefault("resolution", [48, 48])
    if "gn_constant" not in full:
        full["gn_constant"] = estimate_gn_constant(
            Grid2D(64, 64, tuple(full["domain"])), seed=int(run.get("seed", 0))
        )
    config = _run_config("self-grav", full, run)
    build_model(config)
    return config


def small_data_report(config: RunConfig) -> dict:
    """Compare ``||u0||_1`` against ``1 / (2 C_GN)``."""
    model = build_model(config)
    gn = config.params.get("gn_constant")
    if gn is None:
        gn = estimate_gn_constant(Grid2D(64, 64, model.grid.domain), seed=config.seed)
    gn = float(gn)
    threshold = smallness_threshold(gn)
    l1 = cell_integral(model.grid, np.abs(model.species[0].initial_condition))
    return {
        "gn_constant": gn,
        "threshold": threshold,
        "u0_l1": l1,
        "small_data": bool(l1 <= threshold),
    }


# ---------------------------------------------------------------------------
# generic drift
# ---------------------------------------------------------------------------


def _f_factory(block, label, errors):
    kind = block.get("kind", "const")
    c = float(block.get("c", 1.0))
    if kind == "const":
        return lambda x, phi, s: -c * np.ones_like(np.asarray(phi, dtype=float))
    if kind == "exp":
        kappa = float(block.get("kappa", 1.0))
        return lambda x, phi, s: -c * np.exp(kappa * np.asarray(phi, dtype=float) * s)
    errors.append(f"{label}: unknown f kind {kind!r}")
    return lambda x, phi, s: np.zeros_like(np.asarray(phi, dtype=float))


def _g_factory(block, label, errors):
    kind = block.get("kind", "linear")
    R = float(block.get("R", 1.0))
    if kind == "linear":
        return (lambda v, s: np.asarray(v, dtype=float) - R * s), 0.0, R
    if kind == "power":
        q = float(block.get("q", 2.0))
        if q < 1.0:
            errors.append(f"{label}: power g needs q >= 1 (got {q})")
        if q - 1.0 >= 3.0:
            errors.append(f"{label}: growth exponent q-1 = {q - 1} must be < 3")

        def g(v, s):
            v = np.asarray(v, dtype=float)
            return np.sign(v) * np.abs(v) ** q - R * s

        return g, max(q - 1.0, 0.0), R
    errors.append(f"{label}: unknown g kind {kind!r}")
    return (lambda v, s: np.zeros_like(np.asarray(v, dtype=float))), 0.0, R


def check_drift_conditions(f, g, atoms: MeasureAtomList, R: float, phi_max: float = 10.0, n: int = 201):
    """Sample the sign conditions on ``f`` and ``g`` at the atom locations.

    Checks ``f <= 0``, ``g >= 0`` for ``v >= R`` and ``g <= 0`` for ``v <= 0``;
    returns a list of witnesses.
    """
    witnesses = []
    phis = np.concatenate([np.linspace(-phi_max, phi_max, n), [0.0]])
    xs = (0.0, 1.0)
    vr = np.linspace(R, R + 10.0 * max(R, 1.0), n)
    vn = np.linspace(-10.0 * max(R, 1.0), 0.0, n)
    for s in atoms.locations:
        for x in xs:
            fv = np.asarray(f(x, phis, s)) * np.ones_like(phis)
            bad = np.flatnonzero(fv > 0)
            if bad.size:
                witnesses.append(f"sign(f): f(x={x}, phi={phis[bad[0]]:.3g}, s={s}) = {fv[bad[0]]:.3g} > 0")
        gv = np.asarray(g(vr, s))
        bad = np.flatnonzero(gv < 0)
        if bad.size:
            witnesses.append(f"sign(g) above R: g(v={vr[bad[0]]:.3g}, s={s}) = {gv[bad[0]]:.3g} < 0 above R={R}")
        gv = np.asarray(g(vn, s))
        bad = np.flatnonzero(gv > 0)
        if bad.size:
            witnesses.append(f"sign(g) below 0: g(v={vn[bad[0]]:.3g}, s={s}) = {gv[bad[0]]:.3g} > 0 for v <= 0")
    return witnesses


GENERIC_DEFAULTS = {
    "interval": [0.0, 1.0],
    "potential": {"A0": 0.0, "A1": 0.0, "V0": 0.0, "V1": 0.0, "lam": 1.0, "zeta": 0.0},
    "species": [{"alpha": 0.0, "u0": 1.0, "atoms": {"locations": [], "weights": []}}],
}


def _generic_model(params, grid: Grid1D, errors) -> Model:
    a, b = (float(v) for v in params.get("interval", [0.0, 1.0]))
    pot = dict(GENERIC_DEFAULTS["potential"])
    pot.update(params.get("potential", {}))
    blocks = params.get("species", [])
    if not isinstance(blocks, list) or not blocks:
        errors.append("species: need a non-empty list")
        blocks = GENERIC_DEFAULTS["species"]
    species = []
    for i, blk in enumerate(blocks):
        label = f"species[{i}]"
        f = _f_factory(blk.get("f", {}), label, errors)
        g, rho, R = _g_factory(blk.get("g", {}), label, errors)
        at = blk.get("atoms", {}) or {}
        try:
            atoms = MeasureAtomList(tuple(at.get("locations", ())), tuple(at.get("weights", ())), a, b)
        except ValueError as exc:
            errors.append(f"{label}.atoms: {exc}")
            atoms = MeasureAtomList((), (), a, b)
        for w in check_drift_conditions(f, g, atoms, R):
            errors.append(f"{label}: {w}")
        height = R if R > 0 else 1.0
        flux = measure_drift_flux(f, g, atoms, height=height, growth_exponent=rho)
        u0 = initial_field(blk.get("u0", 1.0), grid, errors, f"{label}.u0")
        try:
            sp = SpeciesSpec(
                name=blk.get("name", f"u{i + 1}"), alpha=float(blk.get("alpha", 0.0)), flux=flux,
                initial_condition=np.maximum(u0, 0.0),
                diffusion=float(blk.get("diffusion", 1.0)), time_scale=float(blk.get("time_scale", 1.0)),
            )
        except ValueError as exc:
            errors.append(f"{label}: {exc}")
            continue
        species.append(sp)
    beta = pot.get("beta", [0.0] * len(blocks))
    if len(beta) != len(blocks):
        errors.append(f"potential.beta: {len(beta)} weights for {len(blocks)} species")
        beta = [0.0] * len(blocks)
    try:
        spec = RobinPoissonSpec(
            A0=float(pot["A0"]), A1=float(pot["A1"]), V0=float(pot["V0"]), V1=float(pot["V1"]),
            convention="plus", lam=float(pot["lam"]),
            charge_weights=tuple(float(x) for x in beta), background=float(pot["zeta"]),
        )
        spec.check_well_posed()
    except (ValueError, KeyError) as exc:
        errors.append(f"potential: {exc}")
        spec = RobinPoissonSpec(charge_weights=(0.0,) * len(blocks))
    if not species:
        species = [SpeciesSpec("u1", 0.0, zero_flux(), np.zeros(grid.shape))]
    return Model(grid, species, RobinPoisson1D(spec, grid), name="generic-drift")


def build_generic(params: dict | None = None, **run) -> RunConfig:
    """n-species drift system on (0, 1) with fluxes
    ``sigma_i = sum_j theta_j f_i(x, psi, s_j) g_i(v, s_j)``."""
    full = copy.deepcopy(GENERIC_DEFAULTS)
    full.update(copy.deepcopy(params or {}))
    run.setdefault("resolution", 128)
    config = _run_config("generic-drift", full, run)
    build_model(config)
    return config


# ---------------------------------------------------------------------------


def build_model(config: RunConfig) -> Model:
    """Validate ``config`` exhaustively and build its model.

    All parameter problems are collected and raised together as a single
    :class:`ConfigError`.
    """
    errors: list[str] = []
    params = config.params
    try:
        if config.preset == "corrosion":
            grid = build_grid_1d(int(config.resolution))
            model = _corrosion_model(params, grid, errors)
            points = (0.0, 1.0)
        elif config.preset == "self-grav":
            res = config.resolution
            nx, ny = (res, res) if isinstance(res, int) else res
            grid = build_grid_2d(nx, ny, tuple(params.get("domain", (0.0, 1.0, 0.0, 1.0))))
            model = _self_grav_model(params, grid, errors)
            points = (np.array([[grid.domain[0], grid.domain[2]]]),)
            gn = params.get("gn_constant")
            if gn is not None and not float(gn) > 0:
                errors.append(f"gn_constant must be > 0 (got {gn})")
        elif config.preset == "generic-drift":
            grid = build_grid_1d(int(config.resolution))
            model = _generic_model(params, grid, errors)
            points = (0.0, 1.0)
        else:
            raise ConfigError(
                f"unknown preset {config.preset!r} (expected corrosion, self-grav, generic-drift)"
            )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        errors.append(str(exc))
        _raise(errors)
    _raise(errors)
    _check_fluxes(model, config.seed, points, errors)
    _raise(errors)
    return model


BUILDERS = {
    "corrosion": build_corrosion,
    "self-grav": build_self_grav,
    "generic-drift": build_generic,
}
