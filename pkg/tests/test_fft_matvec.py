#!/usr/bin/env python3
"""Unit tests for fft_matvec module."""

import os
import unittest
from unittest.mock import patch

import numpy as np

from src.bench import DENSE_CHUNK_BYTES, best_time
from src.core import BlockToeplitzKernel, Layout, ObsSeries, Provenance, QoISeries, SpaceTimeField
from src.errors import CapacityError, ConfigError, DimensionError, LayoutError
from src.fft_matvec import (
    apply,
    apply_adjoint,
    apply_operator,
    apply_rows,
    check_plan_compatible,
    dense_apply,
    plan,
    worker_count,
)


def _rel(a, b):
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestFftApply(unittest.TestCase):
    """Test FFT matvecs against the dense reference."""

    def setUp(self):
        """Set up a random generator."""
        self.rng = np.random.default_rng(42)

    def test_forward_matches_dense(self):
        """Test apply against dense_apply for several N_t, including odd and 1."""
        for n_t in (1, 7, 32, 100):
            kernel = BlockToeplitzKernel(self.rng.standard_normal((3, 5, n_t)))
            m = SpaceTimeField.from_rows(self.rng.standard_normal((5, n_t)))
            fast = apply(plan(kernel), m)
            slow = dense_apply(kernel, m)
            self.assertIsInstance(fast, ObsSeries)
            self.assertIs(fast.layout, Layout.SPACE_MAJOR_ROWS)
            self.assertLess(_rel(fast.values, slow.values), 1e-12)

    def test_random_instances_match_dense(self):
        """Test apply and apply_adjoint on 50 random instances up to 8 x 8 x 64."""
        worst = 0.0
        for _ in range(50):
            n_d, n_m = self.rng.integers(1, 9, size=2)
            n_t = int(self.rng.integers(1, 65))
            kernel = BlockToeplitzKernel(self.rng.standard_normal((n_d, n_m, n_t)))
            p = plan(kernel)
            m = SpaceTimeField.from_rows(self.rng.standard_normal((n_m, n_t)))
            d = ObsSeries.from_rows(self.rng.standard_normal((n_d, n_t)))
            worst = max(worst, _rel(apply(p, m).values, dense_apply(kernel, m).values),
                        _rel(apply_adjoint(p, d).values, dense_apply(kernel, d, adjoint=True).values))
        self.assertLess(worst, 1e-10)

    def test_adjoint_matches_dense(self):
        """Test apply_adjoint against the dense transpose."""
        kernel = BlockToeplitzKernel(self.rng.standard_normal((4, 3, 20)))
        d = ObsSeries.from_rows(self.rng.standard_normal((4, 20)))
        fast = apply_adjoint(plan(kernel), d)
        slow = dense_apply(kernel, d, adjoint=True)
        self.assertLess(_rel(fast.values, slow.values), 1e-12)

    def test_dot_product(self):
        """Test <F m, w> == <m, F^T w>."""
        kernel = BlockToeplitzKernel(self.rng.standard_normal((2, 6, 33)))
        p = plan(kernel)
        m = SpaceTimeField.from_rows(self.rng.standard_normal((6, 33)))
        w = ObsSeries.from_rows(self.rng.standard_normal((2, 33)))
        d = apply(p, m)
        lhs = d.values @ w.values
        rhs = m.values @ apply_adjoint(p, w).values
        self.assertLess(abs(lhs - rhs), 1e-12 * np.linalg.norm(d.values) * np.linalg.norm(w.values))

    def test_identity_kernel(self):
        """Test a lag-0 identity kernel reproduces its input."""
        data = np.zeros((3, 3, 8))
        data[:, :, 0] = np.eye(3)
        m = SpaceTimeField.from_rows(self.rng.standard_normal((3, 8)))
        np.testing.assert_allclose(apply(plan(BlockToeplitzKernel(data)), m).values, m.values,
                                   atol=1e-14)

    def test_all_ones_scalar_kernel_is_cumulative_sum(self):
        """Test a scalar all-ones kernel gives the running sum."""
        kernel = BlockToeplitzKernel(np.ones((1, 1, 6)))
        m = np.arange(1.0, 7.0)
        out = apply(plan(kernel), SpaceTimeField.from_rows(m[None, :]))
        np.testing.assert_allclose(out.values, np.cumsum(m), rtol=1e-13)

    def test_time_major_input_rejected(self):
        """Test the layout contract."""
        kernel = BlockToeplitzKernel(self.rng.standard_normal((2, 3, 4)))
        m = SpaceTimeField.from_blocks(self.rng.standard_normal((4, 3)))
        with self.assertRaises(LayoutError):
            apply(plan(kernel), m)

    def test_wrong_dims_rejected(self):
        """Test a dimension mismatch between plan and vector."""
        kernel = BlockToeplitzKernel(self.rng.standard_normal((2, 3, 4)))
        with self.assertRaises(DimensionError):
            apply(plan(kernel), SpaceTimeField.from_rows(np.zeros((3, 5))))

    def test_output_type(self):
        """Test plans built for QoI kernels return QoI series."""
        kernel = BlockToeplitzKernel(self.rng.standard_normal((2, 3, 4)), Provenance.FQ)
        out = apply(plan(kernel, QoISeries), SpaceTimeField.from_rows(np.ones((3, 4))))
        self.assertIsInstance(out, QoISeries)

    def test_apply_operator_uses_direction(self):
        """Test that a G* plan applies the adjoint of its stored map."""
        data = self.rng.standard_normal((2, 3, 6))
        gstar = plan(BlockToeplitzKernel(data, Provenance.GSTAR))
        d = ObsSeries.from_rows(self.rng.standard_normal((2, 6)))
        np.testing.assert_array_equal(apply_operator(gstar, d).values, apply_adjoint(gstar, d).values)
        forward = plan(BlockToeplitzKernel(data, Provenance.F))
        m = SpaceTimeField.from_rows(self.rng.standard_normal((3, 6)))
        np.testing.assert_array_equal(apply_operator(forward, m).values, apply(forward, m).values)

    def test_batched_rows_match_single_applies(self):
        """Test batching over a leading axis."""
        kernel = BlockToeplitzKernel(self.rng.standard_normal((2, 3, 10)))
        p = plan(kernel)
        batch = self.rng.standard_normal((4, 3, 10))
        together = apply_rows(p, batch)
        for b in range(4):
            np.testing.assert_allclose(together[b], apply_rows(p, batch[b]), rtol=1e-13, atol=1e-13)

    def test_plan_compatibility(self):
        """Test plans over different time axes are incompatible."""
        a = plan(BlockToeplitzKernel(np.ones((1, 2, 4))))
        b = plan(BlockToeplitzKernel(np.ones((1, 2, 5))))
        check_plan_compatible(a, a)
        with self.assertRaises(DimensionError):
            check_plan_compatible(a, b)


class TestDenseApply(unittest.TestCase):
    """Test the dense oracle itself."""

    def setUp(self):
        """Set up a random kernel and input."""
        rng = np.random.default_rng(3)
        self.kernel = BlockToeplitzKernel(rng.standard_normal((2, 2, 12)))
        self.m = SpaceTimeField.from_rows(rng.standard_normal((2, 12)))

    def test_chunking_is_transparent(self):
        """Test a tiny memory cap forces one block row per chunk with the same result."""
        row_bytes = 2 * 2 * 12 * 8
        chunked = dense_apply(self.kernel, self.m, max_bytes=row_bytes)
        whole = dense_apply(self.kernel, self.m)
        np.testing.assert_allclose(chunked.values, whole.values, rtol=1e-14, atol=1e-14)

    def test_capacity_error(self):
        """Test refusal when a single block row does not fit."""
        with self.assertRaises(CapacityError):
            dense_apply(self.kernel, self.m, max_bytes=16)

    def test_keeps_layout(self):
        """Test the result follows the input layout."""
        blocks = SpaceTimeField.from_blocks(self.m.blocks())
        self.assertIs(dense_apply(self.kernel, blocks).layout, Layout.TIME_MAJOR_BLOCKS)
        self.assertIs(dense_apply(self.kernel, self.m).layout, Layout.SPACE_MAJOR_ROWS)


class TestPlanSpectrum(unittest.TestCase):
    """Test the transformed kernel stored in a plan."""

    def test_delta_kernel_is_flat(self):
        """Test a lag-0 delta transforms to one at every frequency."""
        data = np.zeros((2, 3, 9))
        data[:, :, 0] = 1.0
        p = plan(BlockToeplitzKernel(data))
        self.assertEqual(p.n_freq, 10)
        np.testing.assert_allclose(p.kernel_hat, 1.0, atol=1e-15)

    def test_parseval(self):
        """Test the full-spectrum energy is 2 N_t times the kernel energy."""
        kernel = BlockToeplitzKernel(np.random.default_rng(6).standard_normal((2, 4, 16)))
        power = np.abs(plan(kernel).kernel_hat) ** 2
        spectrum = power[..., 0] + power[..., -1] + 2 * power[..., 1:-1].sum(axis=-1)
        np.testing.assert_allclose(spectrum, 32 * np.sum(kernel.data ** 2, axis=-1), rtol=1e-12)

    def test_scratch_bytes(self):
        """Test the complex scratch estimate of a batched apply."""
        p = plan(BlockToeplitzKernel(np.ones((3, 5, 8))))
        self.assertEqual(p.scratch_bytes(), 16 * (3 + 5) * 9)
        self.assertEqual(p.scratch_bytes(4), 4 * p.scratch_bytes())


@unittest.skipUnless(os.environ.get("LTIBAYES_SLOW"), "set LTIBAYES_SLOW=1 for timing runs")
class TestScaling(unittest.TestCase):
    """Wall-time growth of FFT and dense matvecs when N_t doubles."""

    def test_doubling_n_time(self):
        """Test FFT grows by at most 2.6x and dense by at least 3.4x from 4096 to 8192."""
        rng = np.random.default_rng(0)
        seconds = {}
        for n_t in (4096, 8192):
            kernel = BlockToeplitzKernel(rng.standard_normal((4, 4, n_t)))
            m = SpaceTimeField.from_rows(rng.standard_normal((4, n_t)))
            p = plan(kernel)
            seconds[n_t] = (best_time(lambda: apply(p, m), 20),
                            best_time(lambda: dense_apply(kernel, m, max_bytes=DENSE_CHUNK_BYTES), 1))
        self.assertLessEqual(seconds[8192][0] / seconds[4096][0], 2.6)
        self.assertGreaterEqual(seconds[8192][1] / seconds[4096][1], 3.4)


class TestWorkerCount(unittest.TestCase):
    """Test the thread cap from the environment."""

    def test_env_override(self):
        """Test LTIBAYES_THREADS is honoured."""
        with patch.dict(os.environ, {"LTIBAYES_THREADS": "3"}):
            self.assertEqual(worker_count(), 3)

    def test_default(self):
        """Test the hardware default."""
        with patch.dict(os.environ, {"LTIBAYES_THREADS": ""}):
            self.assertEqual(worker_count(), os.cpu_count() or 1)

    def test_invalid_value(self):
        """Test a non-integer value is a config error."""
        with patch.dict(os.environ, {"LTIBAYES_THREADS": "many"}):
            with self.assertRaises(ConfigError):
                worker_count()


if __name__ == '__main__':
    unittest.main()
