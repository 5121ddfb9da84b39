"""Wall-insulated field solve: manufactured solutions, spectral constants,
and the external-potential bookkeeping."""

import math

import numpy as np
import pytest

from kinslab.boundary import build_mesh
from kinslab.errors import ConfigError
from kinslab.poisson import (build_potential, cell_norm, check_field_estimates,
                             face_grad, face_norm, grad_trace_constant,
                             h2_norm, h2_regularity_constant, hessian_norm,
                             poincare_constant, solve_poisson_neumann)


def _cosine_mode(mesh, k):
    """rho = cos(k pi x / Lx) solves -phi'' = rho with phi = rho/(k pi/Lx)^2.

    The mode is zero-mean and has zero derivative at both walls, so it is an
    exact eigenpair of the continuum problem (the discrete solve commits a
    second-order error against it).
    """
    w = k * math.pi / mesh.lx
    rho = np.cos(w * mesh.centers)
    return rho, rho / w**2


class TestManufacturedSolution:
    def test_second_order_convergence(self):
        errs = []
        for nx in (32, 64, 128):
            mesh = build_mesh(nx)
            rho, phi_exact = _cosine_mode(mesh, 3)
            phi = solve_poisson_neumann(rho, mesh).phi
            errs.append(cell_norm(phi - phi_exact, mesh))
        assert 3.6 <= errs[0] / errs[1] <= 4.4
        assert 3.6 <= errs[1] / errs[2] <= 4.4

    def test_discrete_residual_is_roundoff(self, rng):
        # the solve inverts the same stencil the residual applies, so the
        # defect is pure linear-algebra roundoff
        mesh = build_mesh(64)
        rho = rng.normal(size=mesh.nx)
        field = solve_poisson_neumann(rho, mesh)
        lap = np.diff(field.grad_faces) / mesh.dx
        np.testing.assert_allclose(-lap, rho - rho.mean(), atol=1e-12)

    def test_gauge_and_wall_conditions(self, rng):
        mesh = build_mesh(48)
        field = solve_poisson_neumann(rng.normal(size=mesh.nx), mesh)
        assert abs(np.mean(field.phi)) < 1e-13
        assert field.grad_faces[0] == 0.0
        assert field.grad_faces[-1] == 0.0

    def test_constant_density_gives_zero_field(self):
        mesh = build_mesh(32)
        field = solve_poisson_neumann(np.full(mesh.nx, 3.7), mesh)
        assert np.max(np.abs(field.phi)) < 1e-13
        assert field.rho_mean == pytest.approx(3.7)

    def test_shape_mismatch_rejected(self):
        mesh = build_mesh(32)
        with pytest.raises(ConfigError):
            solve_poisson_neumann(np.zeros(31), mesh)


class TestSpectralConstants:
    def test_poincare_constant_converges_to_continuum(self):
        # continuum constant Lx/pi; nx=256 sits within 1e-4
        mesh = build_mesh(256)
        assert abs(poincare_constant(mesh) - 1.0 / math.pi) < 1e-4

    def test_poincare_bound_random_densities(self, rng):
        mesh = build_mesh(40)
        for _ in range(50):
            out = check_field_estimates(mesh, rng.normal(size=mesh.nx))
            assert out["poincare_ok"]
            assert out["identity_ok"]

    def test_poincare_attained_by_slowest_mode(self):
        # the k=1 cosine is the eigenvector of the discrete operator's first
        # nonzero eigenvalue only in the continuum limit; the discrete
        # extremiser makes the bound an equality, so maximising over many
        # random fields must approach C_p,h from below
        mesh = build_mesh(64)
        cp = poincare_constant(mesh)
        rng = np.random.default_rng(0)
        best = 0.0
        for _ in range(200):
            rho = rng.normal(size=mesh.nx)
            field = solve_poisson_neumann(rho, mesh)
            num = cell_norm(field.phi, mesh)
            den = face_norm(field.grad_faces, mesh)
            if den > 1e-12:
                best = max(best, num / den)
        assert best <= cp * (1 + 1e-12)
        assert best > 0.95 * cp

    def test_regularity_constant_bounds_probe_set(self, rng):
        mesh = build_mesh(32)
        kh = h2_regularity_constant(mesh)
        for _ in range(50):
            rho = rng.normal(size=mesh.nx)
            rho -= rho.mean()
            denom = cell_norm(rho, mesh)
            field = solve_poisson_neumann(rho, mesh)
            assert h2_norm(field, mesh) <= kh * denom * (1 + 1e-10)

    def test_regularity_constant_closed_form(self):
        # on the eigenbasis the ratio is sqrt((1 + mu + mu^2)/mu^2) maximised
        # at the smallest nonzero eigenvalue, i.e. sqrt(1 + C_p^2 + C_p^4)
        mesh = build_mesh(64)
        cp = poincare_constant(mesh)
        expect = math.sqrt(1 + cp**2 + cp**4)
        assert abs(h2_regularity_constant(mesh) - expect) < 1e-10

    def test_trace_constant_bounds_wall_values(self, rng):
        mesh = build_mesh(32)
        dg = grad_trace_constant(mesh)
        for _ in range(50):
            u = rng.normal(size=mesh.nx)
            h1 = math.sqrt(cell_norm(u, mesh) ** 2
                           + face_norm(face_grad(u, mesh), mesh) ** 2)
            trace = math.sqrt(u[0] ** 2 + u[-1] ** 2)
            assert trace <= dg * h1 * (1 + 1e-10)

    def test_hessian_norm_consistency(self, rng):
        mesh = build_mesh(32)
        field = solve_poisson_neumann(rng.normal(size=mesh.nx), mesh)
        second = np.diff(field.grad_faces) / mesh.dx
        assert hessian_norm(field, mesh) == pytest.approx(
            cell_norm(second, mesh))


class TestPotential:
    def test_zero_family_is_inert(self):
        mesh = build_mesh(16)
        pot = build_potential(mesh, "zero", 0.0)
        assert np.all(pot.v_cells == 0.0) and np.all(pot.dv_cells == 0.0)
        assert pot.c_v == pot.C_v == 1.0 and pot.D_v == 0.0

    def test_cosine_well_samples_and_derivative(self):
        mesh = build_mesh(64, 2.0)
        a = 0.5
        pot = build_potential(mesh, "cosine-well", a)
        k = 2 * math.pi / mesh.lx
        np.testing.assert_allclose(pot.v_cells, a * np.cos(k * mesh.centers),
                                   atol=1e-15)
        np.testing.assert_allclose(pot.dv_cells, -a * k * np.sin(k * mesh.centers),
                                   atol=1e-15)
        # envelope scalars: e^{-V} in [e^{-a}, e^{a}], derivative sup = a k
        assert pot.c_v == pytest.approx(math.exp(-a))
        assert pot.C_v == pytest.approx(math.exp(a))
        assert pot.D_v == pytest.approx(a * k**2)   # k > 1 so curvature wins

    def test_quadratic_well_envelope(self):
        mesh = build_mesh(32)
        pot = build_potential(mesh, "quadratic-well", 0.3)
        assert np.min(pot.v_cells) >= 0.0
        assert np.max(pot.v_cells) <= 0.3
        assert pot.c_v == pytest.approx(math.exp(-0.3))
        assert pot.C_v == pytest.approx(1.0)

    def test_weight_properties(self):
        mesh = build_mesh(32)
        pot = build_potential(mesh, "cosine-well", 0.5)
        np.testing.assert_allclose(pot.weight_cells, np.exp(-pot.v_cells))
        assert pot.weight_faces.shape == (mesh.nx + 1,)
        # envelope brackets every sampled weight
        assert np.all(pot.weight_cells >= pot.c_v - 1e-15)
        assert np.all(pot.weight_cells <= pot.C_v + 1e-15)

    def test_unknown_family_rejected(self):
        with pytest.raises(ConfigError):
            build_potential(build_mesh(8), "morse", 1.0)
