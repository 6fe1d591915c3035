"""Block lower-triangular Toeplitz matvecs via circulant embedding.

Each ``[row][col]`` lag series of a kernel is zero-padded from ``N_t`` to
``2 N_t`` and transformed once with a real-to-complex FFT. Applying the map is
then one batched complex block matvec per frequency, with the frequency as the
batch axis. Transforms use the unnormalized forward / ``1/n`` inverse convention
of ``scipy.fft``.
"""

import logging
import os
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np
import scipy.fft

from .core import (
    DEFAULT_MEMORY_CAP,
    BlockToeplitzKernel,
    Direction,
    Layout,
    ObsSeries,
    QoISeries,
    SpaceTimeField,
    SpaceTimeSeries,
    block_rows,
)
from .errors import CapacityError, ConfigError, DimensionError, LayoutError

logger = logging.getLogger('ltibayes')

OutputSeries = Union[ObsSeries, QoISeries]


def worker_count() -> int:
    """Worker cap from LTIBAYES_THREADS, defaulting to the hardware concurrency."""
    value = os.getenv("LTIBAYES_THREADS", "")
    if value.strip():
        try:
            return max(1, int(value))
        except ValueError as e:
            raise ConfigError(f"LTIBAYES_THREADS must be an integer, got '{value}'") from e
    return os.cpu_count() or 1


@dataclass(frozen=True)
class MatvecPlan:
    """Fourier-space block-diagonal representation of a kernel."""
    kernel_hat: np.ndarray          # (rows_out, n_cols, N_t + 1), complex128
    rows_out: int
    n_cols: int
    n_time: int
    direction: Direction
    output_type: type
    padded_length: int

    @property
    def n_freq(self) -> int:
        return self.kernel_hat.shape[2]

    def scratch_bytes(self, batch: int = 1) -> int:
        """Complex scratch needed by one batched apply."""
        return 16 * batch * (self.rows_out + self.n_cols) * self.n_freq


def plan(kernel: BlockToeplitzKernel, output_type: type = ObsSeries) -> MatvecPlan:
    """Transform every lag series of ``kernel`` once; reusable for any number of applies."""
    n_t = kernel.n_time
    kernel_hat = scipy.fft.rfft(kernel.data, n=2 * n_t, axis=-1, workers=worker_count())
    kernel_hat.setflags(write=False)
    return MatvecPlan(kernel_hat=kernel_hat, rows_out=kernel.rows_out, n_cols=kernel.n_cols,
                      n_time=n_t, direction=kernel.direction, output_type=output_type,
                      padded_length=2 * n_t)


def _require_rows(v: SpaceTimeSeries, n_rows: int, n_time: int) -> np.ndarray:
    if v.layout is not Layout.SPACE_MAJOR_ROWS:
        raise LayoutError(
            f"expected SpaceMajorRows input, got {v.layout.value}; reindex explicitly")
    v.check_dims(n_rows, n_time)
    return v.values.reshape(n_rows, n_time)


def apply_rows(p: MatvecPlan, rows: np.ndarray) -> np.ndarray:
    """Apply the stored map to ``(..., n_cols, N_t)`` arrays; returns ``(..., rows_out, N_t)``."""
    workers = worker_count()
    m_hat = scipy.fft.rfft(rows, n=p.padded_length, axis=-1, workers=workers)
    d_hat = np.einsum("rcf,...cf->...rf", p.kernel_hat, m_hat, optimize=True)
    return scipy.fft.irfft(d_hat, n=p.padded_length, axis=-1, workers=workers)[..., :p.n_time]


def apply_adjoint_rows(p: MatvecPlan, rows: np.ndarray) -> np.ndarray:
    """Transpose of :func:`apply_rows` on ``(..., rows_out, N_t)`` arrays."""
    workers = worker_count()
    d_hat = scipy.fft.rfft(rows, n=p.padded_length, axis=-1, workers=workers)
    m_hat = np.einsum("rcf,...rf->...cf", p.kernel_hat.conj(), d_hat, optimize=True)
    return scipy.fft.irfft(m_hat, n=p.padded_length, axis=-1, workers=workers)[..., :p.n_time]


def apply(p: MatvecPlan, m: SpaceTimeField) -> OutputSeries:
    """``d = F m`` for ``m`` in SpaceMajorRows; the result is SpaceMajorRows too."""
    rows = _require_rows(m, p.n_cols, p.n_time)
    return p.output_type.from_rows(apply_rows(p, rows))


def apply_adjoint(p: MatvecPlan, d: SpaceTimeSeries) -> SpaceTimeField:
    """``m = F^T d`` for ``d`` in SpaceMajorRows."""
    rows = _require_rows(d, p.rows_out, p.n_time)
    return SpaceTimeField.from_rows(apply_adjoint_rows(p, rows))


def apply_operator(p: MatvecPlan, v: SpaceTimeSeries) -> SpaceTimeSeries:
    """Apply the operator a plan is named after, honouring the kernel direction.

    For ``G*`` kernels (stored through ``G = F Gamma_prior``) this is the adjoint
    apply; for ``F`` and ``F_q`` it is the forward apply.
    """
    if p.direction is Direction.ADJOINT:
        return apply_adjoint(p, v)
    return apply(p, v)


def dense_apply(kernel: BlockToeplitzKernel, v: SpaceTimeSeries, adjoint: bool = False,
                max_bytes: int = DEFAULT_MEMORY_CAP,
                output_type: Optional[type] = None) -> SpaceTimeSeries:
    """Reference product through explicitly materialized blocks, O(N_d N_m N_t^2).

    Block rows are materialized in chunks whose size stays under ``max_bytes``;
    the instance is refused when a single block row would not fit. The cap is
    per chunk, not on the full ``N_d N_t x N_m N_t`` matrix, so instances whose
    dense matrix exceeds ``max_bytes`` still run. The result has the same layout
    as ``v``.
    """
    n_t, r, c = kernel.n_time, kernel.rows_out, kernel.n_cols
    row_bytes = r * c * n_t * 8
    if row_bytes > max_bytes:
        raise CapacityError(
            f"one block row needs {row_bytes} bytes, cap is {max_bytes}")
    chunk = max(1, min(n_t, max_bytes // row_bytes))

    if adjoint:
        v.check_dims(r, n_t)
        rhs = v.blocks().reshape(-1)
        out = np.zeros(n_t * c)
        for start in range(0, n_t, chunk):
            stop = min(n_t, start + chunk)
            out += block_rows(kernel, start, stop).T @ rhs[start * r:stop * r]
        result = SpaceTimeField.from_blocks(out.reshape(n_t, c))
    else:
        v.check_dims(c, n_t)
        rhs = v.blocks().reshape(-1)
        out = np.empty(n_t * r)
        for start in range(0, n_t, chunk):
            stop = min(n_t, start + chunk)
            out[start * r:stop * r] = block_rows(kernel, start, stop) @ rhs
        result = (output_type or ObsSeries).from_blocks(out.reshape(n_t, r))

    if v.layout is Layout.SPACE_MAJOR_ROWS:
        return type(result).from_rows(result.rows())
    return result


def check_plan_compatible(first: MatvecPlan, second: MatvecPlan) -> None:
    """Raise unless two plans share the time axis and the parameter space."""
    if first.n_time != second.n_time or first.n_cols != second.n_cols:
        raise DimensionError(
            f"plans disagree: ({first.rows_out}, {first.n_cols}, {first.n_time}) vs "
            f"({second.rows_out}, {second.n_cols}, {second.n_time})")
