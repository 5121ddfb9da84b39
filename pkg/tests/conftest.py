"""Shared factories for the test suite.

Most tests want a small slab problem they can run in well under a second;
``make_problem`` builds one from scratch so individual tests stay explicit
about what they vary (accommodation, cross-section, potential).
"""

import numpy as np
import pytest

from kinslab.boundary import build_mesh, make_bc
from kinslab.collision import CrossSectionSpec, assemble_kernel
from kinslab.poisson import build_potential
from kinslab.solver import Problem
from kinslab.velocity import build_grid


def make_problem(nx=16, n=16, c=0.5, dim=1, vmax=8.0, kind="uniform-midpoint",
                 spec=None, z=0.0, potential=None):
    """Assemble a Problem; ``potential`` is a (family, amplitude) pair."""
    grid = build_grid(dim, n, vmax, kind)
    mesh = build_mesh(nx)
    kernel = assemble_kernel(spec or CrossSectionSpec(), grid, z)
    pot = build_potential(mesh, *potential) if potential is not None else None
    return Problem(grid=grid, mesh=mesh, kernel=kernel,
                   bc=make_bc(grid, c), potential=pot)


def random_state(rng, problem, scale=0.1):
    """Equilibrium plus a mass-free random perturbation (stays positive-ish)."""
    from kinslab.solver import equilibrium
    from kinslab.velocity import project_maxwellian

    f = equilibrium(problem, 1.0)
    noise = rng.normal(size=f.shape) * problem.grid.m
    _, perp = project_maxwellian(noise, problem.grid)
    return f + scale * perp


@pytest.fixture(scope="session")
def base_problem():
    """One shared nx=16, n=16, c=0.5 slab for read-only tests."""
    return make_problem()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
