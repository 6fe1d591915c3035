#!/usr/bin/env python3
"""Unit tests for phase_ledger module."""

import shutil
import tempfile
import unittest
from pathlib import Path

import pandas as pd

from src.phase_ledger import PhaseLedger, PhaseRecord


class TestPhaseLedger(unittest.TestCase):
    """Test the PhaseLedger class."""

    def setUp(self):
        """Set up test environment."""
        self.temp_dir = Path(tempfile.mkdtemp())
        self.ledger = PhaseLedger(self.temp_dir)

    def tearDown(self):
        """Clean up test environment."""
        shutil.rmtree(self.temp_dir)

    def test_record(self):
        """Test recording a phase."""
        entry = self.ledger.record("adjoint_p2o", 16, 8.0, "PDE solves")
        self.assertEqual(entry.seconds_per_unit, 0.5)
        self.assertEqual(len(self.ledger.records), 1)

    def test_zero_count(self):
        """Test seconds per unit of an empty phase."""
        self.assertEqual(PhaseRecord("idle", 0, 1.0).seconds_per_unit, 0.0)

    def test_timed(self):
        """Test the timing context manager."""
        with self.ledger.timed("factorize_K"):
            pass
        record = self.ledger.records[0]
        self.assertEqual((record.phase, record.count), ("factorize_K", 1))
        self.assertGreaterEqual(record.wall_seconds, 0.0)

    def test_totals_and_manifest_entries(self):
        """Test aggregation."""
        self.ledger.record("form_K", 64, 1.5)
        self.ledger.record("form_Q", 32, 0.5)
        self.assertAlmostEqual(self.ledger.total_seconds(), 2.0)
        self.assertEqual(self.ledger.get_summary_stats(), {"form_K": 1.5, "form_Q": 0.5})
        entries = self.ledger.as_manifest_entries()
        self.assertEqual([e.name for e in entries], ["form_K", "form_Q"])
        self.assertEqual(entries[0].count, 64)

    def test_save(self):
        """Test the CSV columns and rows."""
        self.ledger.record("adjoint_p2q", 4, 2.0)
        path = self.ledger.save()
        frame = pd.read_csv(path)
        self.assertEqual(list(frame.columns), ["phase", "count", "wall_seconds", "seconds_per_unit"])
        self.assertEqual(frame.loc[0, "seconds_per_unit"], 0.5)

    def test_save_empty(self):
        """Test saving with no records."""
        self.assertIsNone(self.ledger.save())
        self.assertFalse((self.temp_dir / "phase_ledger.csv").exists())


if __name__ == '__main__':
    unittest.main()
