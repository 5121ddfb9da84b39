"""Phase-space stepper: conservation, stationarity, splitting order, and
agreement with the dense semi-discrete generator."""

import numpy as np
import pytest
from scipy.linalg import expm

from conftest import make_problem, random_state
from kinslab.collision import collision_matrix
from kinslab.errors import CompatibilityError, ConfigError, NumericalError
from kinslab.solver import (SolverConfig, collision_propagator, continuous_rhs,
                            decay_rate_oracle, dense_generator, equilibrium,
                            one_step_residual, run, steady_state, strang_step,
                            total_mass, transport_step, validate_cfl,
                            wall_fluxes)


class TestEquilibrium:
    def test_unit_mass(self, base_problem):
        eq = equilibrium(base_problem, 1.0)
        assert abs(total_mass(eq, base_problem) - 1.0) < 1e-14

    def test_base_equilibrium_is_exact_fixed_point(self, base_problem):
        cfg = SolverConfig(dt=0.005, t_end=1.0)
        assert one_step_residual(base_problem, cfg) < 1e-12

    def test_potential_equilibrium_mass_and_shape(self):
        prob = make_problem(potential=("cosine-well", 0.5))
        eq = equilibrium(prob, 2.0)
        assert abs(total_mass(eq, prob) - 2.0) < 1e-13
        # steady density follows the sampled potential: rho ~ e^{V(x)}
        rho = eq @ prob.grid.weights
        shape = np.exp(prob.potential.v_cells)
        ratio = rho / shape
        assert np.max(ratio) - np.min(ratio) < 1e-12 * np.max(ratio)


class TestConservation:
    def test_transport_preserves_mass(self, base_problem, rng):
        f = random_state(rng, base_problem)
        m0 = total_mass(f, base_problem)
        f1 = transport_step(f, 0.005, base_problem)
        assert abs(total_mass(f1, base_problem) - m0) < 1e-14 * (1 + abs(m0))

    def test_transport_preserves_positivity(self, base_problem, rng):
        f = np.abs(rng.normal(size=(base_problem.mesh.nx, base_problem.grid.n)))
        f1 = transport_step(f, 0.005, base_problem)
        assert np.min(f1) >= 0.0

    def test_propagator_is_matrix_exponential(self, base_problem):
        dt = 0.01
        P = collision_propagator(base_problem.kernel, dt)
        P_ref = expm(collision_matrix(base_problem.kernel) * dt)
        np.testing.assert_allclose(P, P_ref, atol=1e-12)

    def test_propagator_conserves_mass(self, base_problem):
        # w^T P = w^T: the propagator's columns carry unit discrete mass
        P = collision_propagator(base_problem.kernel, 0.02)
        w = base_problem.grid.weights
        np.testing.assert_allclose(w @ P, w, atol=1e-13)

    def test_short_run_audit(self, base_problem, rng):
        f0 = random_state(rng, base_problem)
        cfg = SolverConfig(dt=0.005, t_end=0.5, cadence=10)
        out = run(base_problem, cfg, f0)
        assert out.mass_drift_max < 1e-12
        assert out.wall_flux_max < 1e-13
        assert out.monotone_defect_max < 1e-10
        assert out.step_count == 100
        assert out.records[0].t == 0.0
        assert out.records[-1].t == pytest.approx(0.5)

    def test_wall_fluxes_zero_on_arbitrary_state(self, base_problem, rng):
        f = np.abs(rng.normal(size=(base_problem.mesh.nx, base_problem.grid.n)))
        fl, fr = wall_fluxes(f, base_problem)
        assert abs(fl) < 1e-13 and abs(fr) < 1e-13


class TestSplittingAccuracy:
    def test_strang_is_second_order_vs_dense_exponential(self):
        # small enough for an exact expm reference of the full generator
        prob = make_problem(nx=8, n=8, vmax=4.0)
        A = dense_generator(prob)
        rng = np.random.default_rng(3)
        f0 = random_state(rng, prob)
        t_end = 0.25
        ref = (expm(A * t_end) @ f0.ravel()).reshape(f0.shape)

        errs = []
        for dt in (0.025, 0.0125):
            f = f0.copy()
            for _ in range(int(round(t_end / dt))):
                f = strang_step(f, dt, prob)
            errs.append(float(np.linalg.norm(f - ref)))
        ratio = errs[0] / errs[1]
        # transport is first-order upwind, so the splitting error is
        # dominated by O(dx) spatial diffusion at fixed mesh; in time the
        # scheme must still contract the gap roughly linearly or better
        assert ratio > 1.7

    def test_explicit_collision_mode_close_to_exponential(self, rng):
        prob = make_problem(nx=8, n=8, vmax=4.0)
        f0 = random_state(rng, prob)
        fa = strang_step(f0, 0.01, prob, "exponential")
        fb = strang_step(f0, 0.01, prob, "explicit")
        # forward-Euler collision differs at O(dt^2 ||L||^2) per step
        assert np.max(np.abs(fa - fb)) < 1e-3
        assert np.max(np.abs(fa - fb)) > 0.0


class TestDenseOracle:
    def test_generator_matches_rhs_on_random_states(self, rng):
        prob = make_problem(nx=8, n=8, vmax=4.0)
        A = dense_generator(prob)
        for _ in range(5):
            f = rng.normal(size=(8, 8))
            np.testing.assert_allclose(A @ f.ravel(),
                                       continuous_rhs(f, prob).ravel(),
                                       atol=1e-12)

    def test_mass_row_is_left_null_vector(self):
        prob = make_problem(nx=8, n=8, vmax=4.0)
        A = dense_generator(prob)
        from kinslab.solver import mass_functional
        mhat = mass_functional(prob)
        assert np.max(np.abs(mhat @ A)) < 1e-12

    def test_decay_rate_positive_and_steady_state_consistent(self):
        prob = make_problem(nx=8, n=8, vmax=4.0)
        A = dense_generator(prob)
        tau = decay_rate_oracle(A, prob)
        assert tau > 0.0
        ss = steady_state(A, prob, mass=1.0)
        assert abs(total_mass(ss, prob) - 1.0) < 1e-10
        assert np.max(np.abs(A @ ss.ravel())) < 1e-10
        np.testing.assert_allclose(ss, equilibrium(prob, 1.0), atol=1e-9)

    def test_dof_guard(self):
        prob = make_problem(nx=16, n=16)
        with pytest.raises(CompatibilityError):
            dense_generator(prob, max_dof=64)


class TestForceTerm:
    def test_force_step_conserves_mass(self, rng):
        prob = make_problem(potential=("cosine-well", 0.5))
        f = np.abs(rng.normal(size=(prob.mesh.nx, prob.grid.n)))
        from kinslab.solver import force_step
        f1 = force_step(f, 0.002, prob)
        assert abs(total_mass(f1, prob) - total_mass(f, prob)) < 1e-13

    def test_stationarity_defect_shrinks_under_refinement(self):
        # e^V M is not an exact fixed point of the split stepper; the defect
        # must shrink at observed order >= 0.8 per (dx, dv) halving
        from kinslab.solver import _force_geometry
        res = []
        for nx, n in ((8, 8), (16, 16), (32, 32)):
            prob = make_problem(nx=nx, n=n, potential=("cosine-well", 0.5))
            hv = float(prob.grid.axis_nodes[1] - prob.grid.axis_nodes[0])
            amax = float(np.max(np.abs(prob.potential.dv_cells)))
            _, ratio = _force_geometry(prob.grid)
            dt = 0.5 * min(0.9 * prob.mesh.dx / prob.grid.vmax,
                           0.9 * hv / (amax * ratio))
            res.append(one_step_residual(prob, SolverConfig(dt=dt, t_end=1.0)))
        orders = np.log2(np.array(res[:-1]) / np.array(res[1:]))
        assert np.all(orders >= 0.8), orders

    def test_gauss_hermite_grid_rejected_with_force(self):
        prob = make_problem(kind="gauss-hermite-tensor",
                            potential=("cosine-well", 0.5))
        with pytest.raises(ConfigError):
            validate_cfl(prob, SolverConfig(dt=0.001, t_end=1.0))


class TestRunGuards:
    def test_cfl_violation_rejected(self, base_problem):
        with pytest.raises(ConfigError):
            validate_cfl(base_problem, SolverConfig(dt=0.05, t_end=1.0))

    def test_non_integer_step_count_rejected(self, base_problem, rng):
        f0 = random_state(rng, base_problem)
        with pytest.raises(ConfigError):
            run(base_problem, SolverConfig(dt=0.003, t_end=0.01), f0)

    def test_shape_mismatch_rejected(self, base_problem):
        with pytest.raises(ConfigError):
            run(base_problem, SolverConfig(dt=0.005, t_end=0.05),
                np.zeros((3, 3)))

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_nonfinite_state_detected(self, base_problem):
        f0 = equilibrium(base_problem)
        f0[0, 0] = np.inf
        with pytest.raises(NumericalError):
            run(base_problem, SolverConfig(dt=0.005, t_end=0.05), f0)
