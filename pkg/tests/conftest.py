"""Shared fixtures: the golden period and the benchmark systems."""

import math

import numpy as np
import pytest

from pflab.dynamics import Coupling, HamiltonianSpec, Potential, PotentialTerm
from pflab.geometry import FlatTorus, Sphere
from pflab.spectral_field import default_bump

GOLDEN = (1.0 + math.sqrt(5.0)) / 2.0
T_GOLDEN = 2.0 * math.pi * math.sqrt(GOLDEN)  # sigma = golden ratio
CENTER2 = (math.pi, math.pi)


def circle_spec(eps=1e-3, k=8, potential=None, kind="linear", c=0.0, alpha=1.0, T=T_GOLDEN):
    """Unit circle about (pi, pi) in T^2 with the weak-coupling potential by default."""
    if potential is None:
        potential = Potential((PotentialTerm(0.5, (1, 0), -math.pi / 2),
                               PotentialTerm(0.1, (0, 1), -math.pi / 2, 1, 0.0)), 2)
    return HamiltonianSpec(Sphere(2, 1.0, CENTER2), default_bump(2, k, 1.0, alpha), potential,
                           Coupling(kind, eps, c), T)


def autonomous_potential(amp=0.1):
    return Potential((PotentialTerm(amp, (1, 0), -math.pi / 2),), 2)


def torus_spec(eps=1e-2, k=4, kind="sine_mixed", c=0.5):
    pot = Potential((PotentialTerm(0.3, (1, 0)), PotentialTerm(0.1, (1, 0), 0.0, 1, 0.0)), 2)
    return HamiltonianSpec(FlatTorus(2, (0,), (0.0, 1.0)), default_bump(2, k), pot,
                           Coupling(kind, eps, c), T_GOLDEN)


def circle_point(theta):
    return np.array([math.pi + math.cos(theta), math.pi + math.sin(theta)])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def weak_spec():
    return circle_spec()


@pytest.fixture(scope="session")
def weak_orbit(weak_spec):
    """Converged alternating orbit of the weak-coupling benchmark (shared, it takes seconds)."""
    from pflab.geometry import ParticleState
    from pflab.orbit_solver import alternating_fixed_point
    return alternating_fixed_point(ParticleState((math.pi - 1.0, math.pi), (0.0, 0.0)), weak_spec)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
