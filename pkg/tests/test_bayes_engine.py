#!/usr/bin/env python3
"""Unit tests for bayes_engine module against dense oracles."""

import unittest

import numpy as np
import scipy.stats

from src.bayes_engine import (
    BayesEngine,
    DataSpaceHessian,
    factorize,
    form_K,
    integrate_displacement,
)
from src.core import BlockToeplitzKernel, Dims, ObsSeries, Provenance, QoISeries, SpaceTimeField
from src.errors import ConfigError, NumericalError, StateError
from src.fft_matvec import plan
from src.forward_model.lti import LtiSystem, lti_impulse_kernel, simulate_lti
from src.prior import build as build_prior, premultiply_kernel
from src.verify import dense_operator, dense_prior


def _engine(system, prior, dims, sigma):
    k_f = lti_impulse_kernel(system, dims.n_time, "obs")
    k_fq = lti_impulse_kernel(system, dims.n_time, "qoi")
    return BayesEngine(dims, sigma, plan(k_f), plan(premultiply_kernel(prior, k_f)),
                       plan(k_fq, QoISeries), plan(premultiply_kernel(prior, k_fq)), prior)


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestDenseOracles(unittest.TestCase):
    """Compare the engine with explicitly assembled matrices on a tiny system."""

    def setUp(self):
        """Set up a random 5-point, 3-sensor, 2-QoI system over 6 steps."""
        self.dims = Dims(n_space=5, n_sensors=3, n_qoi=2, n_time=6, dt_obs=0.5)
        self.system = LtiSystem.random(6, 5, 3, 2, seed=21)
        self.prior = build_prior(5, 1.0, gamma=0.5)
        self.sigma = 0.3
        self.engine = _engine(self.system, self.prior, self.dims, self.sigma).offline()
        self.f = dense_operator(lti_impulse_kernel(self.system, 6, "obs"))
        self.fq = dense_operator(lti_impulse_kernel(self.system, 6, "qoi"))
        self.gamma = dense_prior(self.prior, 6)
        self.rng = np.random.default_rng(4)

    def _posterior_cov(self):
        hessian = self.f.T @ self.f / self.sigma ** 2 + np.linalg.inv(self.gamma)
        return np.linalg.inv(hessian)

    def test_K_matches_dense(self):
        """Test K = sigma^2 I + F Gamma F^T."""
        reference = self.sigma ** 2 * np.eye(18) + self.f @ self.gamma @ self.f.T
        self.assertLess(_rel(self.engine.hessian.K, reference), 1e-10)
        self.assertLess(self.engine.hessian.asymmetry, 1e-11)
        np.testing.assert_array_equal(self.engine.hessian.K, self.engine.hessian.K.T)

    def test_fused_and_columnwise_assembly_agree(self):
        """Test batching does not change K."""
        single = form_K(self.engine.plan_f, self.engine.plan_gstar, self.sigma ** 2, fused=False)
        scale = np.max(np.abs(self.engine.hessian.K))
        np.testing.assert_allclose(single.K, self.engine.hessian.K, rtol=1e-12, atol=1e-13 * scale)

    def test_cholesky(self):
        """Test the factor reproduces K and solves accurately."""
        chol = self.engine.hessian.chol
        scale = np.max(np.abs(self.engine.hessian.K))
        np.testing.assert_allclose(chol @ chol.T, self.engine.hessian.K, rtol=1e-12, atol=1e-13 * scale)
        rhs = self.rng.standard_normal(18)
        x = self.engine.hessian.solve(rhs)
        self.assertLess(_rel(self.engine.hessian.K @ x, rhs), 1e-10)

    def test_map_solves_normal_equations(self):
        """Test m_map against the dense parameter-space solve."""
        d = self.rng.standard_normal(18)
        reference = self._posterior_cov() @ (self.f.T @ d / self.sigma ** 2)
        m_map = self.engine.infer_map(ObsSeries.from_rows(d.reshape(3, 6)))
        self.assertLess(_rel(m_map.rows().ravel(), reference), 1e-8)

    def test_map_accepts_time_major_data(self):
        """Test the data layout does not change the result."""
        d = ObsSeries.from_rows(self.rng.standard_normal((3, 6)))
        blocks = ObsSeries.from_blocks(d.blocks())
        np.testing.assert_allclose(self.engine.infer_map(blocks).values,
                                   self.engine.infer_map(d).values, rtol=1e-14, atol=1e-15)

    def test_q_equals_fq_of_map(self):
        """Test Q d == F_q m_map."""
        d = ObsSeries.from_rows(self.rng.standard_normal((3, 6)))
        q, _, _ = self.engine.predict_qoi(d)
        _, q_ref = simulate_lti(self.system, self.engine.infer_map(d))
        self.assertLess(_rel(q.values, q_ref.values), 1e-10)

    def test_qoi_covariance_matches_dense(self):
        """Test Gamma_post(q) = F_q H^-1 F_q^T."""
        reference = self.fq @ self._posterior_cov() @ self.fq.T
        self.assertLess(_rel(self.engine.qoi.qoi_cov, reference), 1e-8)
        self.assertLess(_rel(self.engine.qoi.prior_qoi_cov, self.fq @ self.gamma @ self.fq.T), 1e-10)
        self.assertIs(self.engine.form_qoi_cov(), self.engine.qoi.qoi_cov)
        self.assertIs(self.engine.form_Q(), self.engine.qoi.Q)

    def test_posterior_contracts(self):
        """Test posterior QoI variances never exceed prior ones."""
        post = np.diag(self.engine.qoi.qoi_cov)
        prior = np.diag(self.engine.qoi.prior_qoi_cov)
        self.assertTrue(np.all(post <= prior + 1e-10 * np.max(prior)))
        self.assertTrue(np.all(post >= -1e-10 * np.max(prior)))

    def test_variance_grows_with_noise(self):
        """Test posterior QoI variances increase with sigma."""
        diags = [np.diag(_engine(self.system, self.prior, self.dims, s).offline().qoi.qoi_cov)
                 for s in (0.1, 0.3, 1.0)]
        tol = 1e-10 * np.max(diags[2])
        self.assertTrue(np.all(diags[0] <= diags[1] + tol))
        self.assertTrue(np.all(diags[1] <= diags[2] + tol))

    def test_uninformative_data_returns_prior(self):
        """Test a huge sigma leaves the QoI covariance at its prior value."""
        engine = _engine(self.system, self.prior, self.dims, 1e5).offline()
        self.assertLess(_rel(engine.qoi.qoi_cov, engine.qoi.prior_qoi_cov), 1e-4)

    def test_smw_residual(self):
        """Test the parameter-space residual of the data-space MAP."""
        d = ObsSeries.from_rows(self.rng.standard_normal((3, 6)))
        self.assertLess(self.engine.smw_residual(self.engine.infer_map(d), d), 1e-8)

    def test_cg_baseline_agrees(self):
        """Test prior-preconditioned CG converges to the same MAP."""
        d = ObsSeries.from_rows(self.rng.standard_normal((3, 6)))
        m_cg, iterations = self.engine.solve_map_cg(d, tol=1e-12, maxiter=500)
        self.assertGreater(iterations, 0)
        self.assertLess(_rel(m_cg.values, self.engine.infer_map(d).values), 1e-6)

    def test_data_informed_spectrum(self):
        """Test the eigenvalues of sigma^-2 F Gamma F^T."""
        eigenvalues, rank = self.engine.data_informed_spectrum()
        reference = np.sort(np.linalg.eigvalsh(self.f @ self.gamma @ self.f.T / self.sigma ** 2))[::-1]
        np.testing.assert_allclose(eigenvalues, reference, rtol=1e-8,
                                   atol=1e-10 * reference[0])
        self.assertEqual(rank, int(np.sum(eigenvalues > 1.0)))
        self.assertTrue(np.all(np.diff(eigenvalues) <= 0))

    def test_pointwise_std_within_standard_errors(self):
        """Test the Hutchinson estimate against the dense posterior displacement variance."""
        dt, n_t = self.dims.dt_obs, self.dims.n_time
        lift = np.kron(np.eye(5), dt * np.ones((1, n_t)))
        reference = np.diag(lift @ self._posterior_cov() @ lift.T)
        std, stderr = self.engine.pointwise_param_std(n_probes=200, seed=2)
        self.assertEqual(std.shape, (5,))
        self.assertTrue(np.all(np.abs(std ** 2 - reference) <= 3 * stderr + 1e-12))

    def test_pointwise_variance_halves_with_twice_the_samples(self):
        """Test the spread of the variance estimate over seeds halves when the sample count doubles."""
        spread = []
        for n_samples in (50, 100):
            estimates = [self.engine.pointwise_param_std(n_samples, seed)[0] ** 2
                         for seed in range(400)]
            spread.append(np.var(estimates, axis=0).sum())
        self.assertGreater(spread[1] / spread[0], 0.35)
        self.assertLess(spread[1] / spread[0], 0.7)

    def test_qoi_samples(self):
        """Test posterior draws are centred on the forecast with the right spread."""
        d = ObsSeries.from_rows(self.rng.standard_normal((3, 6)))
        draws = self.engine.sample_qoi_posterior(d, n_samples=4000, seed=5)
        self.assertEqual(draws.shape, (4000, 2, 6))
        q_map, _, _ = self.engine.predict_qoi(d)
        spread = np.sqrt(np.diag(self.engine.qoi.qoi_cov)).reshape(2, 6)
        np.testing.assert_array_less(np.abs(draws.mean(axis=0) - q_map.rows()),
                                     5 * spread / np.sqrt(4000) + 1e-12)
        again = self.engine.sample_qoi_posterior(d, n_samples=4000, seed=5)
        np.testing.assert_array_equal(draws, again)

    def test_online_engine_from_artifacts(self):
        """Test an engine built from the factor and Q reproduces the full engine."""
        online = BayesEngine.from_artifacts(self.dims, self.sigma, self.engine.hessian.chol,
                                            self.engine.qoi.Q, self.engine.qoi.qoi_cov,
                                            self.engine.plan_gstar)
        d = ObsSeries.from_rows(self.rng.standard_normal((3, 6)))
        np.testing.assert_array_equal(online.infer_map(d).values, self.engine.infer_map(d).values)
        for a, b in zip(online.predict_qoi(d), self.engine.predict_qoi(d)):
            np.testing.assert_array_equal(a.values, b.values)

    def test_summarize(self):
        """Test the combined online summary."""
        d = ObsSeries.from_rows(self.rng.standard_normal((3, 6)))
        summary = self.engine.summarize(d, n_probes=10, seed=1)
        np.testing.assert_allclose(summary.displacement,
                                   summary.m_map.rows().sum(axis=1) * 0.5, rtol=1e-14)
        self.assertIn("infer_map", summary.timings)
        self.assertTrue(np.all(np.isfinite(summary.pointwise_std)))
        no_estimate = self.engine.summarize(d)
        self.assertTrue(np.all(np.isnan(no_estimate.pointwise_std)))


class TestIdentityProblem(unittest.TestCase):
    """Closed forms with F = F_q = I and Gamma_prior = I."""

    def setUp(self):
        """Set up identity maps over 3 points and 4 steps."""
        data = np.zeros((3, 3, 4))
        data[:, :, 0] = np.eye(3)
        self.dims = Dims(3, 3, 3, 4, 1.0)
        self.sigma = 0.5
        prior = build_prior(3, 1.0, gamma=0.0, delta=1.0)
        k_f = BlockToeplitzKernel(data, Provenance.F)
        k_fq = BlockToeplitzKernel(data, Provenance.FQ)
        self.engine = BayesEngine(self.dims, self.sigma, plan(k_f),
                                  plan(premultiply_kernel(prior, k_f)), plan(k_fq, QoISeries),
                                  plan(premultiply_kernel(prior, k_fq)), prior).offline()
        self.s2 = self.sigma ** 2

    def test_K_is_scaled_identity(self):
        """Test K = (1 + sigma^2) I."""
        np.testing.assert_allclose(self.engine.hessian.K, (1 + self.s2) * np.eye(12), atol=1e-12)

    def test_map_is_shrunk_data(self):
        """Test m_map = d / (1 + sigma^2)."""
        d = np.random.default_rng(0).standard_normal((3, 4))
        m_map = self.engine.infer_map(ObsSeries.from_rows(d))
        np.testing.assert_allclose(m_map.rows(), d / (1 + self.s2), rtol=1e-12, atol=1e-14)

    def test_qoi_maps(self):
        """Test Q = I / (1 + sigma^2) and Gamma_post(q) = sigma^2 / (1 + sigma^2) I."""
        np.testing.assert_allclose(self.engine.qoi.Q, np.eye(12) / (1 + self.s2), atol=1e-12)
        np.testing.assert_allclose(self.engine.qoi.qoi_cov, self.s2 / (1 + self.s2) * np.eye(12),
                                   atol=1e-12)

    def test_pointwise_std_is_exact(self):
        """Test the Hutchinson estimate is exact when the reduction is diagonal."""
        std, _ = self.engine.pointwise_param_std(n_probes=3, seed=0)
        expected = np.sqrt(4 * self.s2 / (1 + self.s2))
        np.testing.assert_allclose(std, expected, rtol=1e-10)


class TestCredibleIntervals(unittest.TestCase):
    """Test the interval arithmetic on hand-made artifacts."""

    def setUp(self):
        """Set up an online engine with Q = 0 and variance 0.04."""
        self.dims = Dims(2, 1, 1, 3, 1.0)
        kernel = BlockToeplitzKernel(np.zeros((1, 2, 3)), Provenance.GSTAR)
        self.engine = BayesEngine.from_artifacts(self.dims, 1.0, np.eye(3), np.zeros((3, 3)),
                                                 0.04 * np.eye(3), plan(kernel))
        self.d = ObsSeries.zeros(1, 3)

    def test_half_width_at_95(self):
        """Test the 95% half-width is 1.96 standard deviations."""
        q, lo, hi = self.engine.predict_qoi(self.d)
        np.testing.assert_array_equal(q.values, 0.0)
        np.testing.assert_allclose(hi.values, 0.392, rtol=1e-12)
        np.testing.assert_allclose(lo.values, -0.392, rtol=1e-12)

    def test_other_levels_use_normal_quantile(self):
        """Test a 90% interval."""
        _, lo, hi = self.engine.predict_qoi(self.d, level=0.9)
        z = scipy.stats.norm.ppf(0.95)
        np.testing.assert_allclose(hi.values - lo.values, 2 * z * 0.2, rtol=1e-12)

    def test_invalid_level(self):
        """Test levels outside (0, 1)."""
        with self.assertRaises(ConfigError):
            self.engine.predict_qoi(self.d, level=1.0)


class TestEngineErrors(unittest.TestCase):
    """Test state and numerical failures."""

    def test_online_before_offline(self):
        """Test MAP inference without a factorized K."""
        dims = Dims(2, 1, 1, 3, 1.0)
        kernel = BlockToeplitzKernel(np.zeros((1, 2, 3)), Provenance.GSTAR)
        engine = BayesEngine(dims, 1.0, plan_gstar=plan(kernel))
        with self.assertRaises(StateError):
            engine.infer_map(ObsSeries.zeros(1, 3))
        with self.assertRaises(StateError):
            engine.predict_qoi(ObsSeries.zeros(1, 3))

    def test_indefinite_K(self):
        """Test the factorization failure reports the smallest eigenvalue."""
        with self.assertRaises(NumericalError) as ctx:
            factorize(DataSpaceHessian(K=np.diag([1.0, -2.0]), sigma2=1.0))
        self.assertIn("-2.0", str(ctx.exception))

    def test_solve_before_factorize(self):
        """Test solving an unfactorized Hessian."""
        with self.assertRaises(StateError):
            DataSpaceHessian(K=np.eye(2), sigma2=1.0).solve(np.ones(2))

    def test_nonpositive_sigma(self):
        """Test sigma validation."""
        with self.assertRaises(ConfigError):
            BayesEngine(Dims(2, 1, 1, 3, 1.0), 0.0)


class TestIntegrateDisplacement(unittest.TestCase):
    """Test the time integral."""

    def test_constant_rate(self):
        """Test a constant velocity integrates to N_t dt v."""
        m = SpaceTimeField.from_rows(np.full((2, 5), 0.3))
        np.testing.assert_allclose(integrate_displacement(m, 2.0), [3.0, 3.0], rtol=1e-14)

    def test_zero(self):
        """Test a zero field."""
        np.testing.assert_array_equal(integrate_displacement(SpaceTimeField.zeros(4, 3), 1.0), 0.0)


if __name__ == '__main__':
    unittest.main()
