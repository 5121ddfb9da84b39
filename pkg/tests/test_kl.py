"""Karhunen-Loeve basis against the closed-form Brownian spectrum, plus the
sampling/orthogonality machinery."""

import numpy as np
import pytest

from kinslab.errors import AssumptionError, ConfigError
from kinslab.kl import (CHUNK, CovarianceKernel, brownian_analytic,
                        mercer_errors, nystrom_eig, path_variance,
                        project_coeffs, sample_coeffs, sample_paths, truncate,
                        verify_orthogonality)

BROWNIAN = CovarianceKernel("brownian")
BASIS = nystrom_eig(BROWNIAN, 512)
TRUNC = truncate(BASIS, 0.95)


class TestBrownianOracle:
    def test_eigenvalues_match_closed_form(self):
        lam_ref, _ = brownian_analytic(5, BASIS.tgrid)
        rel = np.abs(BASIS.eigenvalues[:5] - lam_ref) / lam_ref
        assert np.max(rel) < 1e-2

    def test_leading_eigenfunction_sup_norm(self):
        _, psi_ref = brownian_analytic(1, BASIS.tgrid)
        assert np.max(np.abs(BASIS.psi[:, 0] - psi_ref[:, 0])) < 1e-2

    def test_weight_orthonormality(self):
        gram = (BASIS.psi[:, :8].T * BASIS.weights) @ BASIS.psi[:, :8]
        np.testing.assert_allclose(gram, np.eye(8), atol=1e-10)

    def test_nystrom_preserves_weighted_trace(self):
        # trapezoid rule integrates R(t,t) = t exactly
        assert BASIS.eigenvalues.sum() == pytest.approx(0.5, abs=1e-12)

    def test_truncation_order_at_95_percent(self):
        assert TRUNC.d == 5
        assert 0.95 <= TRUNC.captured < 0.97


class TestSampling:
    def test_coefficient_roundtrip(self):
        paths = sample_paths(TRUNC, 64, seed=3)
        back = project_coeffs(paths, TRUNC)
        np.testing.assert_allclose(back, sample_coeffs(TRUNC, 64, seed=3),
                                   atol=1e-10)

    def test_chunked_stream_is_prefix_stable(self):
        # Philox keyed per chunk: asking for more samples never changes the
        # earlier ones
        a = sample_coeffs(TRUNC, CHUNK, seed=11)
        b = sample_coeffs(TRUNC, CHUNK + 500, seed=11)
        np.testing.assert_array_equal(a, b[:CHUNK])

    def test_empirical_path_variance(self):
        var = path_variance(TRUNC, 200_000, seed=5)
        lam = TRUNC.eigenvalues[:TRUNC.d]
        theo = (TRUNC.psi[:, :TRUNC.d] ** 2) @ lam
        np.testing.assert_allclose(var, theo, rtol=0.03, atol=1e-4)

    def test_gram_diag_and_offdiag(self):
        out = verify_orthogonality(TRUNC, 100_000, seed=9)
        assert out["offdiag_ok"] and out["diag_ok"]
        assert out["max_offdiag"] <= 0.05

    def test_correlated_coefficients_are_caught(self):
        # negative control: feed coefficients with a strong cross-correlation
        rng = np.random.default_rng(17)
        z = rng.standard_normal((20_000, TRUNC.d))
        z[:, 1] = 0.8 * z[:, 0] + 0.2 * z[:, 1]
        coeffs = z * np.sqrt(TRUNC.eigenvalues[:TRUNC.d])
        out = verify_orthogonality(TRUNC, 20_000, seed=0, coeffs=coeffs)
        assert not out["offdiag_ok"]


class TestMercer:
    def test_diagonal_errors_decrease(self):
        out = mercer_errors(BASIS, BROWNIAN, n_pairs=12, seed=2)
        assert out["monotone"]
        assert np.max(out["errors"][:, -1]) < 1e-3


class TestOtherKernels:
    def test_exponential_spectrum_is_positive_and_traces(self):
        kern = CovarianceKernel("exponential", T=2.0, ell=0.4)
        basis = nystrom_eig(kern, 256)
        assert basis.eigenvalues[-1] > -1e-12
        # R(t,t) = 1, so the weighted trace is exactly T
        assert basis.eigenvalues.sum() == pytest.approx(2.0, abs=1e-10)

    def test_indefinite_table_rejected(self):
        n = 16
        t = -np.eye(n)
        with pytest.raises(AssumptionError, match="indefinite"):
            nystrom_eig(CovarianceKernel("table", table=t), n)

    def test_asymmetric_table_rejected(self):
        t = np.zeros((16, 16))
        t[0, 1] = 1.0
        with pytest.raises(ConfigError, match="symmetric"):
            CovarianceKernel("table", table=t).validate()


class TestGuards:
    def test_grid_too_small(self):
        with pytest.raises(ConfigError):
            nystrom_eig(BROWNIAN, 8)

    def test_energy_fraction_window(self):
        with pytest.raises(ConfigError):
            truncate(BASIS, 1.5)

    def test_path_budget(self):
        with pytest.raises(ConfigError):
            sample_paths(BASIS, 100_000, seed=0)

    def test_orthogonality_needs_samples(self):
        with pytest.raises(ConfigError):
            verify_orthogonality(TRUNC, 100, seed=0)

    def test_table_grid_size_mismatch(self):
        kern = CovarianceKernel("table", table=np.eye(16))
        with pytest.raises(ConfigError, match="grid"):
            kern.matrix(np.linspace(0.0, 1.0, 32))
