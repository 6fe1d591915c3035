"""Per-phase compute ledger: unit counts and wall time of every offline/online phase."""

import logging
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Iterator, List, Optional

import pandas as pd

from .archive import PhaseEntry, write_frame

logger = logging.getLogger('ltibayes')


@dataclass
class PhaseRecord:
    """One ledger row, e.g. ``adjoint_p2o`` with 16 solves taking 12.3 s."""
    phase: str
    count: int
    wall_seconds: float
    unit: str = ""

    @property
    def seconds_per_unit(self) -> float:
        return self.wall_seconds / self.count if self.count else 0.0


class PhaseLedger:
    """Collects phase timings and writes them as ``phase_ledger.csv``."""

    def __init__(self, output_path: Path):
        self.output_path = Path(output_path)
        self.records: List[PhaseRecord] = []

    def record(self, phase: str, count: int, wall_seconds: float, unit: str = "") -> PhaseRecord:
        entry = PhaseRecord(phase, count, wall_seconds, unit)
        self.records.append(entry)
        logger.debug(f"Phase recorded: {phase} - {count} {unit or 'units'}, {wall_seconds:.3f}s")
        return entry

    @contextmanager
    def timed(self, phase: str, count: int = 1, unit: str = "") -> Iterator[None]:
        start = time.perf_counter()
        yield
        self.record(phase, count, time.perf_counter() - start, unit)

    def total_seconds(self) -> float:
        return sum(r.wall_seconds for r in self.records)

    def as_manifest_entries(self) -> List[PhaseEntry]:
        return [PhaseEntry(r.phase, r.count, r.wall_seconds) for r in self.records]

    def save(self, name: str = "phase_ledger.csv") -> Optional[Path]:
        """Write the ledger CSV; returns ``None`` when nothing was recorded."""
        if not self.records:
            logger.warning("⚠ No phase records to save")
            return None
        frame = pd.DataFrame({
            "phase": [r.phase for r in self.records],
            "count": [r.count for r in self.records],
            "wall_seconds": [r.wall_seconds for r in self.records],
            "seconds_per_unit": [r.seconds_per_unit for r in self.records],
        })
        output_file = self.output_path / name
        write_frame(output_file, frame)
        logger.info(f"Phase ledger saved to {output_file}")
        logger.info(f"Summary: {len(self.records)} phases, {self.total_seconds():.2f}s total")
        return output_file

    def get_summary_stats(self) -> Dict[str, float]:
        return {r.phase: r.wall_seconds for r in self.records}
