#!/usr/bin/env python3
"""Unit tests for prior module."""

import unittest

import numpy as np

from src.core import BlockToeplitzKernel, Layout, Provenance, SpaceTimeField
from src.errors import ConfigError, DimensionError
from src.prior import (
    apply_cov,
    apply_precision,
    build,
    default_gamma,
    neumann_laplacian,
    premultiply_kernel,
    sample,
)


class TestNeumannLaplacian(unittest.TestCase):
    """Test the 1D Laplacian."""

    def test_rows_sum_to_zero(self):
        """Test constants are in the null space."""
        lap = neumann_laplacian(7, 2.0).toarray()
        np.testing.assert_allclose(lap.sum(axis=1), 0.0, atol=1e-15)

    def test_symmetric(self):
        """Test symmetry."""
        lap = neumann_laplacian(6, 1.0).toarray()
        np.testing.assert_array_equal(lap, lap.T)

    def test_single_point(self):
        """Test the degenerate one-point grid."""
        np.testing.assert_array_equal(neumann_laplacian(1, 1.0).toarray(), [[0.0]])


class TestPriorOp(unittest.TestCase):
    """Test build, covariance and precision."""

    def setUp(self):
        """Set up a 12-point prior."""
        self.prior = build(12, 100.0, gamma=default_gamma(100.0), delta=1.0)
        self.rng = np.random.default_rng(5)

    def test_gamma_zero_is_identity(self):
        """Test gamma = 0 and delta = 1 gives the identity covariance."""
        prior = build(5, 1.0, gamma=0.0, delta=1.0)
        np.testing.assert_allclose(prior.dense_cov(), np.eye(5), atol=1e-15)

    def test_delta_scaling(self):
        """Test gamma = 0 gives delta^-2 I."""
        prior = build(4, 1.0, gamma=0.0, delta=2.0)
        np.testing.assert_allclose(prior.dense_cov(), 0.25 * np.eye(4), rtol=1e-14)

    def test_cov_inverts_precision(self):
        """Test apply_cov(apply_precision(v)) == v."""
        v = SpaceTimeField.from_rows(self.rng.standard_normal((12, 6)))
        back = apply_cov(self.prior, apply_precision(self.prior, v))
        np.testing.assert_allclose(back.values, v.values, rtol=1e-9, atol=1e-10)

    def test_cov_is_symmetric_positive_definite(self):
        """Test the dense covariance."""
        cov = self.prior.dense_cov()
        np.testing.assert_allclose(cov, cov.T, atol=1e-14)
        self.assertGreater(np.min(np.linalg.eigvalsh(cov)), 0.0)
        self.assertTrue(np.all(self.prior.marginal_std() > 0))

    def test_blocks_are_independent_in_time(self):
        """Test the covariance acts on every time block alike."""
        rows = np.zeros((12, 3))
        rows[4, 1] = 1.0
        out = apply_cov(self.prior, SpaceTimeField.from_rows(rows)).rows()
        np.testing.assert_array_equal(out[:, 0], 0.0)
        np.testing.assert_array_equal(out[:, 2], 0.0)
        np.testing.assert_allclose(out[:, 1], self.prior.dense_cov()[:, 4], rtol=1e-12)

    def test_layout_preserved(self):
        """Test a TimeMajorBlocks input gives a TimeMajorBlocks output."""
        v = SpaceTimeField.from_blocks(self.rng.standard_normal((3, 12)))
        out = apply_cov(self.prior, v)
        self.assertIs(out.layout, Layout.TIME_MAJOR_BLOCKS)
        np.testing.assert_allclose(out.rows(), self.prior.cov_blocks(v.rows()), rtol=1e-13)

    def test_wrong_size_rejected(self):
        """Test a field over the wrong number of points."""
        with self.assertRaises(DimensionError):
            apply_cov(self.prior, SpaceTimeField.from_rows(np.zeros((11, 2))))

    def test_invalid_parameters(self):
        """Test delta and gamma validation."""
        with self.assertRaises(ConfigError):
            build(4, 1.0, gamma=1.0, delta=0.0)
        with self.assertRaises(ConfigError):
            build(4, 1.0, gamma=-1.0)

    def test_sample_is_reproducible(self):
        """Test fixed seeds give identical draws."""
        a = sample(self.prior, 4, seed=9)
        b = sample(self.prior, 4, seed=9)
        np.testing.assert_array_equal(a.values, b.values)
        self.assertEqual((a.n_rows, a.n_time), (12, 4))


def _dense_operator(n_space, h_x, gamma, delta):
    """``delta I - gamma L`` written out entry by entry."""
    lap = np.zeros((n_space, n_space))
    for i in range(n_space - 1):
        lap[i, i] -= 1.0
        lap[i + 1, i + 1] -= 1.0
        lap[i, i + 1] = lap[i + 1, i] = 1.0
    return delta * np.eye(n_space) - gamma * lap / h_x ** 2


class TestDenseOracle(unittest.TestCase):
    """Compare the factorized prior with directly inverted dense matrices."""

    def setUp(self):
        """Set up a 20-point prior with the default diffusion weight."""
        self.prior = build(20, 100.0)
        inverse = np.linalg.inv(_dense_operator(20, 100.0, default_gamma(100.0), 1.0))
        self.cov = inverse @ inverse
        self.rng = np.random.default_rng(11)

    def test_apply_cov_matches_inverse_square(self):
        """Test Gamma_prior v == (delta I - gamma L)^-2 v blockwise."""
        rows = self.rng.standard_normal((20, 4))
        out = apply_cov(self.prior, SpaceTimeField.from_rows(rows)).rows()
        np.testing.assert_allclose(out, self.cov @ rows, rtol=1e-10, atol=1e-11 * np.abs(out).max())

    def test_constant_vector(self):
        """Test constants are eigenvectors with eigenvalue delta^-2."""
        prior = build(20, 100.0, delta=0.7)
        c = SpaceTimeField.from_rows(np.full((20, 3), 2.5))
        np.testing.assert_allclose(apply_cov(prior, c).values, 2.5 / 0.7 ** 2, rtol=1e-12)
        np.testing.assert_allclose(apply_precision(prior, c).values, 2.5 * 0.7 ** 2,
                                   rtol=1e-12)

    def test_correlation_decays_from_every_node(self):
        """Test normalized correlation decreases monotonically with distance."""
        rho = self.prior.correlation()
        np.testing.assert_allclose(np.diag(rho), 1.0, rtol=1e-12)
        for i in range(20):
            self.assertTrue(np.all(np.diff(rho[i, i:]) < 0), f"row {i} right of diagonal")
            self.assertTrue(np.all(np.diff(rho[i, :i + 1]) > 0), f"row {i} left of diagonal")

    def test_raw_covariance_peaks_off_diagonal_near_the_ends(self):
        """Test larger end variances pull unnormalized rows towards the boundary."""
        self.assertGreater(self.cov[5, 4], self.cov[5, 5])
        self.assertGreater(self.prior.marginal_std()[0], self.prior.marginal_std()[10])


class TestSampleStatistics(unittest.TestCase):
    """Monte Carlo checks of prior draws."""

    def test_sample_mean(self):
        """Test the mean of 10^4 draws is within 4 standard errors of zero."""
        prior = build(12, 100.0)
        draws = sample(prior, 10_000, seed=3).rows()
        standardized = draws.mean(axis=1) / (prior.marginal_std() / np.sqrt(10_000))
        self.assertLess(np.max(np.abs(standardized)), 4.0)

    def test_sample_covariance(self):
        """Test the empirical covariance of 10^5 draws on 5 nodes within 5% Frobenius."""
        prior = build(5, 1.0, gamma=1.0)
        draws = sample(prior, 100_000, seed=4).rows()
        reference = prior.dense_cov()
        error = np.linalg.norm(np.cov(draws) - reference) / np.linalg.norm(reference)
        self.assertLess(error, 0.05)


class TestPremultiplyKernel(unittest.TestCase):
    """Test G* kernel construction."""

    def setUp(self):
        """Set up a prior and a random F kernel."""
        self.prior = build(6, 1.0, gamma=2.0)
        self.kernel = BlockToeplitzKernel(np.random.default_rng(2).standard_normal((3, 6, 5)))

    def test_lagwise_covariance(self):
        """Test every lag slice row is multiplied by Gamma_x."""
        g = premultiply_kernel(self.prior, self.kernel)
        cov = self.prior.dense_cov()
        for s in range(3):
            for k in range(5):
                np.testing.assert_allclose(g.data[s, :, k], cov @ self.kernel.data[s, :, k],
                                           rtol=1e-11, atol=1e-13)

    def test_provenance_mapping(self):
        """Test F -> G* and Fq -> Gq*."""
        self.assertIs(premultiply_kernel(self.prior, self.kernel).provenance, Provenance.GSTAR)
        fq = BlockToeplitzKernel(self.kernel.data, Provenance.FQ)
        self.assertIs(premultiply_kernel(self.prior, fq).provenance, Provenance.GQSTAR)

    def test_rejects_premultiplied_input(self):
        """Test a G* kernel cannot be premultiplied again."""
        g = premultiply_kernel(self.prior, self.kernel)
        with self.assertRaises(DimensionError):
            premultiply_kernel(self.prior, g)

    def test_column_mismatch(self):
        """Test the spatial size check."""
        with self.assertRaises(DimensionError):
            premultiply_kernel(build(5, 1.0), self.kernel)


if __name__ == '__main__':
    unittest.main()
