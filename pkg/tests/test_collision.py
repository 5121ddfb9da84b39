"""Relaxation operator: null space, symmetry, dissipation, and constants.

The dissipation identity and the spectral gap both have brute-force oracles
(double loops / dense eigensolves), so every structural claim here is checked
against an independent computation rather than against the implementation.
"""

import numpy as np
import pytest

from kinslab.collision import (CrossSectionSpec, apply_collision, apply_sigma,
                               assemble_kernel, coercivity_check,
                               collision_matrix, htheorem_quadratic,
                               kernel_matrix, momentum_exchange,
                               momentum_exchange_constant, operator_norm,
                               spectral_gap, z_derivative_kernels)
from kinslab.errors import AssumptionError, ConfigError
from kinslab.velocity import build_grid, inner_dnu, norm_dnu, project_maxwellian

GRID = build_grid(1, 16, 8.0)
UNIT = assemble_kernel(CrossSectionSpec(), GRID)
BUMP_SPEC = CrossSectionSpec(family="gaussian-bump", base=1.0,
                             bump_amplitude=0.5, bump_width=2.0)
BUMP = assemble_kernel(BUMP_SPEC, GRID)


def _brute_htheorem(kernel, f):
    """Explicit O(n^2) python-loop version of the dissipation double sum."""
    g = kernel.grid
    total = 0.0
    for i in range(g.n):
        for j in range(g.n):
            d = f[i] / g.m[i] - f[j] / g.m[j]
            total += (g.weights[i] * g.weights[j] * kernel.sigma[i, j]
                      * g.m[i] * g.m[j] * d * d)
    return -0.5 * total


class TestStructure:
    def test_maxwellian_in_null_space(self):
        for kernel in (UNIT, BUMP):
            lm = apply_collision(kernel, kernel.grid.m)
            assert np.max(np.abs(lm)) < 1e-14

    def test_mass_conservation_pointwise(self, rng):
        f = rng.normal(size=(7, GRID.n))
        lf = apply_collision(BUMP, f)
        masses = np.sum(lf * GRID.weights, axis=-1)
        assert np.max(np.abs(masses)) < 1e-13

    def test_self_adjoint_in_dnu(self, rng):
        for _ in range(25):
            f = rng.normal(size=GRID.n)
            g = rng.normal(size=GRID.n)
            left = inner_dnu(apply_collision(BUMP, f), g, GRID)
            right = inner_dnu(f, apply_collision(BUMP, g), GRID)
            assert abs(left - right) < 1e-12 * (1 + abs(left))

    def test_matrix_matches_operator(self, rng):
        mat = collision_matrix(BUMP)
        f = rng.normal(size=GRID.n)
        np.testing.assert_allclose(mat @ f, apply_collision(BUMP, f),
                                   atol=1e-13)

    def test_apply_sigma_annihilates_maxwellian(self):
        # derivative kernels act through the same relaxation form, so every
        # multiple of M is in their null space too
        sigma = BUMP.sigma * 0.3
        out = apply_sigma(sigma, GRID, 2.5 * GRID.m)
        assert np.max(np.abs(out)) < 1e-14


class TestDissipation:
    def test_htheorem_identity_brute_force(self, rng):
        for _ in range(5):
            f = rng.normal(size=GRID.n) * GRID.m
            fast = htheorem_quadratic(BUMP, f)
            slow = _brute_htheorem(BUMP, f)
            assert abs(fast - slow) < 1e-12 * (1 + abs(slow))
            # and the quadratic form equals <Lf, f>_dnu
            lhs = float(inner_dnu(apply_collision(BUMP, f), f, GRID))
            assert abs(lhs - fast) < 1e-10 * (1 + abs(fast))

    def test_coercivity_hundred_seeds(self):
        rng = np.random.default_rng(42)
        lam = spectral_gap(BUMP)
        for _ in range(100):
            f = rng.normal(size=GRID.n) * np.sqrt(GRID.m)
            chk = coercivity_check(BUMP, f, lambda_h=lam)
            assert chk["coercive"], chk

    def test_unit_sigma_gap_is_one(self):
        # sigma == 1 collapses L to rho M - f, whose gap is exactly 1
        assert abs(spectral_gap(UNIT) - 1.0) < 1e-10

    def test_gap_against_restricted_eigensolve(self):
        # independent route: eigenvalues of -L restricted to the mass-zero
        # subspace via a dense similarity transform
        g = GRID
        mat = collision_matrix(BUMP)
        scale = np.sqrt(g.weights / g.m)
        sym = (mat * scale[:, None]) / scale[None, :]
        lam = np.linalg.eigvalsh((sym + sym.T) / 2)
        lam_sorted = np.sort(-lam)
        assert lam_sorted[0] < 1e-12           # Maxwellian direction
        assert abs(lam_sorted[1] - spectral_gap(BUMP)) < 1e-10

    def test_lambda_bound_below_gap(self):
        # min sigma is a certified lower bound for the dense gap
        assert BUMP.lambda_bound <= spectral_gap(BUMP) + 1e-12


class TestConstants:
    def test_momentum_exchange_unit_sigma(self, rng):
        # for sigma == 1: L f = rho M - f and j(M) = 0, so j^L = -j(f)
        f = rng.normal(size=(4, GRID.n))
        jl = momentum_exchange(UNIT, f)
        jf = np.einsum("...i,i,ik->...k", f, GRID.weights, GRID.nodes)
        np.testing.assert_allclose(jl, -jf, atol=1e-13)

    def test_momentum_bound_random(self, rng):
        cl = momentum_exchange_constant(BUMP.sigma, GRID)
        for _ in range(100):
            f = rng.normal(size=GRID.n) * GRID.m
            _, perp = project_maxwellian(f, GRID)
            jl = np.linalg.norm(momentum_exchange(BUMP, f))
            assert jl <= cl * float(norm_dnu(perp, GRID)) * (1 + 1e-12)

    def test_operator_norm_bound_random(self, rng):
        ct = operator_norm(BUMP.sigma, GRID)
        for _ in range(100):
            f = rng.normal(size=GRID.n) * GRID.m
            lf = apply_collision(BUMP, f)
            assert float(norm_dnu(lf, GRID)) <= ct * float(norm_dnu(f, GRID)) * (1 + 1e-12)

    def test_operator_norm_near_attainment(self):
        # the norm is attained on the top eigenvector of the symmetrized form
        g = GRID
        ct = operator_norm(BUMP.sigma, g)
        mat = kernel_matrix(BUMP.sigma, g)
        scale = np.sqrt(g.weights / g.m)
        sym = (mat * scale[:, None]) / scale[None, :]
        lam, q = np.linalg.eigh((sym + sym.T) / 2)
        k = np.argmax(np.abs(lam))
        f = q[:, k] / scale
        ratio = float(norm_dnu(mat @ f, g) / norm_dnu(f, g))
        assert abs(ratio - ct) < 1e-10 * ct


class TestParameterDerivatives:
    def test_affine_first_derivative_exact(self):
        spec = CrossSectionSpec(z_coupling="affine", z_coeff=0.3)
        dks = z_derivative_kernels(spec, GRID, z=0.7, l_max=3)
        np.testing.assert_array_equal(dks[0], np.full((GRID.n, GRID.n), 0.3))
        assert np.all(dks[1] == 0.0) and np.all(dks[2] == 0.0)

    def test_exponential_derivatives_match_fd(self):
        spec = CrossSectionSpec(z_coupling="exponential", z_coeff=0.4)
        z, dz = 0.2, 1e-5
        dks = z_derivative_kernels(spec, GRID, z, l_max=2)
        plus = assemble_kernel(spec, GRID, z + dz).sigma
        minus = assemble_kernel(spec, GRID, z - dz).sigma
        fd1 = (plus - minus) / (2 * dz)
        assert np.max(np.abs(dks[0] - fd1)) < 1e-8
        mid = assemble_kernel(spec, GRID, z).sigma
        fd2 = (plus - 2 * mid + minus) / dz**2
        assert np.max(np.abs(dks[1] - fd2)) < 1e-5

    def test_table_family_has_no_derivatives(self):
        spec = CrossSectionSpec(family="table", table=np.ones((GRID.n, GRID.n)))
        with pytest.raises(ConfigError):
            z_derivative_kernels(spec, GRID, 0.0, 1)


class TestValidation:
    def test_positivity_floor_enforced(self):
        spec = CrossSectionSpec(family="gaussian-bump", base=0.01,
                                bump_amplitude=-0.5, bump_width=2.0)
        with pytest.raises(AssumptionError):
            assemble_kernel(spec, GRID)

    def test_lambda_min_floor(self):
        spec = CrossSectionSpec(base=0.04, lambda_min=0.05)
        with pytest.raises(AssumptionError):
            assemble_kernel(spec, GRID)

    def test_asymmetric_table_rejected(self):
        bad = np.ones((GRID.n, GRID.n))
        bad[0, 1] = 2.0
        with pytest.raises(AssumptionError):
            assemble_kernel(CrossSectionSpec(family="table", table=bad), GRID)

    def test_unknown_family_rejected(self):
        with pytest.raises(ConfigError):
            assemble_kernel(CrossSectionSpec(family="hard-sphere"), GRID)
