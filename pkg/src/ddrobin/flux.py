"""
Robin boundary fluxes ``sigma(t, x, v, psi)``.

A flux is an immutable :class:`FluxSpec` wrapping a vectorized evaluator. The
evaluator receives the time ``t``, the boundary point ``x`` (scalar in 1-D,
``(m, 2)`` array in 2-D), the boundary density ``v`` and the potential
argument ``psi``, and must broadcast over arrays.

Sign convention: ``sigma > 0`` is inflow. With the outward normal ``nu``,
``du/dnu + alpha u dV/dnu = sigma`` on the boundary, so the total mass
changes at the rate of the boundary integral of ``sigma``.

The validators here are samplers. They look for counterexamples to the
bounded non-dissipation conditions

    sigma * chi_plus(v - k) <= Lambda_T,     sigma * chi_minus(v) <= 0,

and measure an empirical constant for the polynomial-growth Lipschitz class.
They never claim a proof.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np


class FluxKind(str, enum.Enum):
    CORROSION = "corrosion"
    MEASURE_DRIFT = "measure-drift"
    ZERO = "zero"
    CUSTOM = "custom"


Evaluator = Callable[..., np.ndarray]


@dataclass(frozen=True)
class FluxSpec:
    """Boundary flux with its non-dissipation metadata.

    ``height`` is the level ``k`` above which the flux is bounded by
    ``lambda_T``; ``growth_exponent`` is the ``rho`` of the growth class.
    """

    evaluator: Evaluator
    kind: FluxKind = FluxKind.CUSTOM
    height: float = 1.0
    lambda_T: float = 0.0
    growth_exponent: float = 0.0
    truncation: int | None = None
    params: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "kind", FluxKind(self.kind))
        if not self.height >= 0:
            raise ValueError(f"flux height must be nonnegative, got {self.height}")
        if self.lambda_T < 0:
            raise ValueError(f"lambda_T must be nonnegative, got {self.lambda_T}")
        if self.growth_exponent < 0:
            raise ValueError("growth exponent must be nonnegative")

    def __call__(self, t, x, v, psi):
        return self.evaluator(t, x, v, psi)

    def check_growth_exponent(self, dim: int):
        if not self.growth_exponent < 1.0 + 2.0 / dim:
            raise ValueError(
                f"growth exponent {self.growth_exponent} must be < 1 + 2/{dim}"
            )


def eval_flux(spec: FluxSpec, t, x, v, psi):
    """Evaluate ``spec`` after rejecting non-finite input."""
    for name, arg in (("t", t), ("x", x), ("v", v), ("psi", psi)):
        if not np.all(np.isfinite(arg)):
            raise ValueError(f"non-finite flux argument {name}={arg!r}")
    out = spec(t, x, v, psi)
    if np.ndim(out) == 0:
        return float(out)
    return np.asarray(out, dtype=float)


# ---------------------------------------------------------------------------
# Presets
# ---------------------------------------------------------------------------


def _zero(t, x, v, psi):
    return np.zeros(np.broadcast(np.asarray(v), np.asarray(psi)).shape)


def zero_flux(height: float = 1.0) -> FluxSpec:
    return FluxSpec(_zero, FluxKind.ZERO, height=height, lambda_T=0.0)


@dataclass(frozen=True)
class CorrosionFluxParams:
    """Coefficients of one species at one endpoint."""

    m: float = 1.0
    k: float = 1.0
    a: float = 0.5
    b: float = 0.5
    u_max: float = 1.0
    gamma: int = 1

    def validate(self) -> list[str]:
        errors = []
        if not self.m > 0:
            errors.append(f"m must be > 0 (got {self.m})")
        if not self.k > 0:
            errors.append(f"k must be > 0 (got {self.k})")
        if not 0.0 <= self.a <= 1.0:
            errors.append(f"a must lie in [0, 1] (got {self.a})")
        if not 0.0 <= self.b <= 1.0:
            errors.append(f"b must lie in [0, 1] (got {self.b})")
        if not self.u_max > 0:
            errors.append(f"u_max must be > 0 (got {self.u_max})")
        return errors


def corrosion_value(p: CorrosionFluxParams, v, psi):
    """``-(m e^{-g b psi} + k e^{g a psi}) v + m u_max e^{-g b psi}``."""
    out_rate = np.exp(-p.gamma * p.b * psi)
    in_rate = np.exp(p.gamma * p.a * psi)
    return -(p.m * out_rate + p.k * in_rate) * v + p.m * p.u_max * out_rate


def corrosion_flux(
    left: CorrosionFluxParams, right: CorrosionFluxParams | None = None, midpoint: float = 0.5
) -> FluxSpec:
    """Corrosion flux with separate coefficients at ``x < midpoint`` and
    ``x >= midpoint``.

    Height ``k = max(u_max)`` and ``Lambda_T = 0``: above ``u_max`` the
    outflow term dominates, below zero both terms are inflow.
    """
    right = left if right is None else right
    errors = left.validate() + right.validate()
    if errors:
        raise ValueError("; ".join(errors))

    def evaluate(t, x, v, psi):
        x = np.asarray(x, dtype=float)
        if x.ndim == 2:  # 2-D boundary points: split on the first coordinate
            x = x[:, 0]
        on_left = x < midpoint
        return np.where(on_left, corrosion_value(left, v, psi), corrosion_value(right, v, psi))

    return FluxSpec(
        evaluate,
        FluxKind.CORROSION,
        height=max(left.u_max, right.u_max),
        lambda_T=0.0,
        growth_exponent=0.0,
        params={"left": left, "right": right},
    )


@dataclass(frozen=True)
class MeasureAtomList:
    """Finite atomic measure ``sum_j weight_j delta_{location_j}`` on ``[a, b]``."""

    locations: tuple[float, ...] = ()
    weights: tuple[float, ...] = ()
    a: float = 0.0
    b: float = 1.0

    def __post_init__(self):
        locs = tuple(float(s) for s in self.locations)
        wts = tuple(float(w) for w in self.weights)
        if len(locs) != len(wts):
            raise ValueError("atom locations and weights differ in length")
        if any(w < 0 for w in wts):
            raise ValueError(f"atom weights must be nonnegative, got {wts}")
        if any(not self.a <= s <= self.b for s in locs):
            raise ValueError(f"atom locations must lie in [{self.a}, {self.b}]")
        object.__setattr__(self, "locations", locs)
        object.__setattr__(self, "weights", wts)

    def __len__(self):
        return len(self.weights)


def measure_drift_flux(
    f: Callable,
    g: Callable,
    atoms: MeasureAtomList,
    height: float = 1.0,
    growth_exponent: float = 0.0,
) -> FluxSpec:
    """``sigma(t, x, v, psi) = sum_j weight_j f(x, psi, s_j) g(v, s_j)``.

    With ``f <= 0`` everywhere, ``g >= 0`` for ``v >= height`` and ``g <= 0``
    for ``v <= 0`` the flux is non-dissipative at ``height`` with
    ``Lambda_T = 0``.
    """
    if len(atoms) == 0:
        return zero_flux(height)
    locs, wts = atoms.locations, atoms.weights

    def evaluate(t, x, v, psi):
        total = 0.0
        for s, w in zip(locs, wts):
            total = total + w * f(x, psi, s) * g(v, s)
        return total + _zero(t, x, v, psi)

    return FluxSpec(
        evaluate,
        FluxKind.MEASURE_DRIFT,
        height=height,
        lambda_T=0.0,
        growth_exponent=growth_exponent,
        params={"atoms": atoms},
    )


# ---------------------------------------------------------------------------
# Truncation
# ---------------------------------------------------------------------------


def _psi_smooth(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    pos = s > 0
    out[pos] = np.exp(-1.0 / s[pos])
    return out


def cutoff(x):
    """C-infinity cutoff: 1 on ``|x| <= 1``, 0 on ``|x| >= 2``, monotone between."""
    ax = np.abs(np.asarray(x, dtype=float))
    num = _psi_smooth(2.0 - ax)
    den = num + _psi_smooth(ax - 1.0)
    out = np.where(ax <= 1.0, 1.0, np.where(ax >= 2.0, 0.0, num / np.where(den > 0, den, 1.0)))
    return float(out) if out.ndim == 0 else out


def truncate_flux(spec: FluxSpec, p: int) -> FluxSpec:
    """``sigma_p(t, x, v, psi) = sigma(t, x, v, psi) * cutoff(v / p)``.

    Height and ``lambda_T`` are inherited unchanged.
    """
    if not p >= 1:
        raise ValueError(f"truncation level must be >= 1, got {p}")
    inner = spec.evaluator

    def evaluate(t, x, v, psi):
        return inner(t, x, v, psi) * cutoff(np.asarray(v, dtype=float) / p)

    return replace(spec, evaluator=evaluate, truncation=p)


# ---------------------------------------------------------------------------
# Validators
# ---------------------------------------------------------------------------


@dataclass
class Violation:
    condition: str
    t: float
    x: object
    v: float
    psi: float
    sigma: float


@dataclass
class NonDissipationReport:
    passed: bool
    height: float
    lambda_T: float
    n_samples: int
    max_above_height: float  # sup of sigma over sampled v > k
    min_below_zero: float  # inf of sigma over sampled v < 0
    violations: list[Violation] = field(default_factory=list)

    @property
    def witness(self) -> Violation | None:
        return self.violations[0] if self.violations else None


def _sample_axes(spec: FluxSpec, budget: int, rng, psi_max: float, v_max: float):
    k = spec.height
    n = max(4, int(round(budget ** (1 / 2))))
    v_crit = [0.0, -1e-12, 1e-12, k, k * (1 + 1e-9), 2 * k, -k, -v_max, v_max]
    v_rand = np.concatenate(
        [
            -v_max * rng.random(n),  # v <= 0
            k + (v_max - k) * rng.random(n),  # v > k
            k * (1.0 + np.logspace(-12, 0, n)),  # just above k
        ]
    )
    psi = np.concatenate([[-psi_max, 0.0, psi_max], rng.uniform(-psi_max, psi_max, n)])
    return np.concatenate([v_crit, v_rand]), psi


def check_bounded_nondissipative(
    spec: FluxSpec,
    sample_budget: int = 4096,
    points: Sequence = (0.0, 1.0),
    t_max: float = 1.0,
    psi_max: float = 10.0,
    v_max: float | None = None,
    seed: int = 0,
    max_witnesses: int = 10,
) -> NonDissipationReport:
    """Search for ``(t, x, v, psi)`` with ``v > k`` and ``sigma > Lambda_T`` or
    with ``v < 0`` and ``sigma < 0``.

    Samples a stratified grid that always contains ``v`` in ``{0, k, 2k}`` and
    ``psi = +-psi_max``. The spec is not modified.
    """
    if sample_budget < 1:
        raise ValueError("sample_budget must be >= 1")
    rng = np.random.default_rng(seed)
    k = spec.height
    v_max = 10.0 * max(k, 1.0) if v_max is None else v_max
    vs, psis = _sample_axes(spec, sample_budget, rng, psi_max, v_max)
    V, P = np.meshgrid(vs, psis, indexing="ij")
    V, P = V.ravel(), P.ravel()
    times = np.unique(np.concatenate([[0.0, t_max], rng.uniform(0.0, t_max, 2)]))
    violations: list[Violation] = []
    sup_above = -np.inf
    inf_below = np.inf
    count = 0
    for t in times:
        for x in points:
            sig = np.broadcast_to(np.asarray(spec(t, x, V, P), dtype=float), V.shape)
            count += sig.size
            above = V > k
            below = V < 0
            if above.any():
                sup_above = max(sup_above, float(sig[above].max()))
            if below.any():
                inf_below = min(inf_below, float(sig[below].min()))
            bad = (above & (sig > spec.lambda_T)) | (below & (sig < 0)) | ~np.isfinite(sig)
            for idx in np.flatnonzero(bad)[: max(0, max_witnesses - len(violations))]:
                cond = "above-height" if V[idx] > k else "below-zero"
                if not np.isfinite(sig[idx]):
                    cond = "non-finite"
                violations.append(
                    Violation(cond, float(t), x, float(V[idx]), float(P[idx]), float(sig[idx]))
                )
    return NonDissipationReport(
        passed=not violations,
        height=k,
        lambda_T=spec.lambda_T,
        n_samples=count,
        max_above_height=sup_above,
        min_below_zero=inf_below,
        violations=violations,
    )


@dataclass
class GrowthReport:
    rho: float
    M: float
    K_M: float
    K_by_range: dict
    unbounded: bool


def check_growth_class(
    spec: FluxSpec,
    rho: float,
    M: float,
    sample_budget: int = 4096,
    points: Sequence = (0.0, 1.0),
    v_ranges: Sequence[float] = (1.0, 10.0, 100.0),
    seed: int = 0,
) -> GrowthReport:
    """Empirical smallest ``K_M`` with

        |s(v, psi) - s(w, phi)| <= K_M [(1 + |v|^rho + |w|^rho)|v - w|
                                       + (1 + |v|^(rho+1) + |w|^(rho+1))|psi - phi|]

    over random pairs with ``|psi|, |phi| <= M`` and ``|v|, |w|`` up to each
    value in ``v_ranges``. ``unbounded`` is set when the constant keeps
    growing by more than a factor 2 per range decade.
    """
    if not M > 0:
        raise ValueError("M must be positive")
    rng = np.random.default_rng(seed)
    n = max(1, sample_budget // max(1, len(v_ranges)))
    t_samples = rng.uniform(0.0, M, n)
    k_by_range = {}
    for vr in v_ranges:
        v = rng.uniform(-vr, vr, n)
        w = np.where(rng.random(n) < 0.5, v + rng.normal(0.0, 1e-3 * vr, n), rng.uniform(-vr, vr, n))
        psi = rng.uniform(-M, M, n)
        phi = np.where(rng.random(n) < 0.5, psi, rng.uniform(-M, M, n))
        worst = 0.0
        for x in points:
            s1 = np.asarray(spec(t_samples, x, v, psi), dtype=float)
            s2 = np.asarray(spec(t_samples, x, w, phi), dtype=float)
            denom = (1 + np.abs(v) ** rho + np.abs(w) ** rho) * np.abs(v - w) + (
                1 + np.abs(v) ** (rho + 1) + np.abs(w) ** (rho + 1)
            ) * np.abs(psi - phi)
            num = np.abs(s1 - s2) * np.ones_like(denom)
            ok = denom > 0
            if ok.any():
                worst = max(worst, float(np.max(num[ok] / denom[ok])))
        k_by_range[float(vr)] = worst
    ks = [k_by_range[float(vr)] for vr in v_ranges]
    unbounded = len(ks) >= 3 and ks[0] > 0 and ks[-1] > 2.0 * ks[-2] > 4.0 * ks[-3]
    return GrowthReport(rho, M, max(ks) if ks else 0.0, k_by_range, unbounded)
