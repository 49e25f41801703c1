import numpy as np
import pytest

from ddrobin.flux import FluxKind, FluxSpec, zero_flux
from ddrobin.grid import Grid1D
from ddrobin.solver import Model, SpeciesSpec


def constant_flux(c: float, height: float = 1.0) -> FluxSpec:
    return FluxSpec(
        lambda t, x, v, psi: c * np.ones_like(np.asarray(v, dtype=float)),
        FluxKind.CUSTOM,
        height=height,
    )


def heat_model(n=32, u0=None, flux=None, time_scale=1.0):
    g = Grid1D(n)
    u0 = 1.0 + np.cos(np.pi * g.cell_centers) if u0 is None else u0
    sp = SpeciesSpec("u", 0.0, flux or zero_flux(), u0, time_scale=time_scale)
    return Model(g, [sp])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
