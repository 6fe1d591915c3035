"""Abstract interface for linear time-invariant forward models."""

import logging
import threading
import time
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Dict, List, Optional, Tuple

import numpy as np
from tqdm import tqdm

from ..core import BlockToeplitzKernel, ObsSeries, Provenance, QoISeries, SpaceTimeField

logger = logging.getLogger('ltibayes')


class _SolveCounter:
    """Process-wide count of forward/adjoint time-stepping runs."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def increment(self, runs: int = 1) -> None:
        with self._lock:
            self._count += runs

    @property
    def value(self) -> int:
        with self._lock:
            return self._count


SOLVE_COUNTER = _SolveCounter()


def solver_invocations() -> int:
    """Number of time-stepping solves run so far in this process."""
    return SOLVE_COUNTER.value


class ForwardModel(ABC):
    """A discrete LTI map from seafloor velocity to sensor pressure and surface height.

    Implementations provide the forward run and the exact discrete adjoint run;
    kernel extraction (Phase 1) is built on top of the adjoint.
    """

    @property
    @abstractmethod
    def n_space(self) -> int:
        """Number of spatial parameter points N_m."""

    @property
    @abstractmethod
    def n_sensors(self) -> int:
        """Number of pressure sensors N_d."""

    @property
    @abstractmethod
    def n_qoi(self) -> int:
        """Number of forecast locations N_q."""

    @abstractmethod
    def get_model_name(self) -> str:
        """Short backend name used in logs and manifests."""

    @abstractmethod
    def simulate_forward(self, m: SpaceTimeField) -> Tuple[ObsSeries, QoISeries]:
        """Run the model on ``m`` from rest; returns ``(F m, F_q m)`` in SpaceMajorRows."""

    @abstractmethod
    def simulate_adjoint(self, w_obs: Optional[ObsSeries], w_qoi: Optional[QoISeries],
                         n_time: int) -> SpaceTimeField:
        """Reverse-time sweep returning ``F^T w_obs + F_q^T w_qoi`` in SpaceMajorRows."""

    def get_configuration(self) -> Dict[str, object]:
        """Backend-specific settings recorded in the run manifest."""
        return {}

    def kernel_for_sensor(self, j: int, n_time: int) -> np.ndarray:
        """Row generator of ``F`` for sensor ``j`` as an ``(N_m, N_t)`` array.

        Entry ``[x, k]`` is block ``F_{k+1,1}[j, x]``, obtained from one adjoint
        sweep seeded with sensor ``j`` at the final observation time.
        """
        if not 0 <= j < self.n_sensors:
            raise IndexError(f"sensor index {j} outside 0..{self.n_sensors - 1}")
        seed = np.zeros((n_time, self.n_sensors))
        seed[-1, j] = 1.0
        sweep = self.simulate_adjoint(ObsSeries.from_blocks(seed), None, n_time)
        return np.ascontiguousarray(sweep.rows()[:, ::-1])

    def kernel_for_qoi(self, j: int, n_time: int) -> np.ndarray:
        """Row generator of ``F_q`` for forecast location ``j``; see :meth:`kernel_for_sensor`."""
        if not 0 <= j < self.n_qoi:
            raise IndexError(f"QoI index {j} outside 0..{self.n_qoi - 1}")
        seed = np.zeros((n_time, self.n_qoi))
        seed[-1, j] = 1.0
        sweep = self.simulate_adjoint(None, QoISeries.from_blocks(seed), n_time)
        return np.ascontiguousarray(sweep.rows()[:, ::-1])

    def extract_kernels(self, n_time: int, max_workers: int = 1, show_progress: bool = True
                        ) -> Tuple[BlockToeplitzKernel, BlockToeplitzKernel, Dict[str, List[float]]]:
        """Phase 1: one adjoint solve per sensor and per forecast location.

        Solves share no mutable state and run on a thread pool. Returns the ``F``
        and ``F_q`` kernels plus per-solve wall times keyed by phase name.
        """
        jobs = [("adjoint_p2o", j) for j in range(self.n_sensors)]
        jobs += [("adjoint_p2q", j) for j in range(self.n_qoi)]
        f_data = np.empty((self.n_sensors, self.n_space, n_time))
        fq_data = np.empty((self.n_qoi, self.n_space, n_time))
        timings: Dict[str, List[float]] = {"adjoint_p2o": [], "adjoint_p2q": []}

        def run(job):
            kind, j = job
            start = time.perf_counter()
            if kind == "adjoint_p2o":
                rows = self.kernel_for_sensor(j, n_time)
            else:
                rows = self.kernel_for_qoi(j, n_time)
            return kind, j, rows, time.perf_counter() - start

        logger.info(f"Running {len(jobs)} adjoint solves ({self.get_model_name()}, "
                    f"{max_workers} worker(s))...")
        with ThreadPoolExecutor(max_workers=max_workers) as executor:
            futures = [executor.submit(run, job) for job in jobs]
            progress = tqdm(as_completed(futures), total=len(futures),
                            desc="Adjoint solves", disable=not show_progress)
            for future in progress:
                kind, j, rows, seconds = future.result()
                target = f_data if kind == "adjoint_p2o" else fq_data
                target[j] = rows
                timings[kind].append(seconds)

        return (BlockToeplitzKernel(f_data, Provenance.F),
                BlockToeplitzKernel(fq_data, Provenance.FQ), timings)
