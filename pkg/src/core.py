"""Dimension bookkeeping, space/time vector layouts and block-Toeplitz access.

Vectors over space and time are stored flat. Two storage orders exist:

* ``TimeMajorBlocks``: blocks ``m_j`` (one value per spatial point) stacked over
  time, i.e. a ``(n_time, n_rows)`` matrix flattened row by row.
* ``SpaceMajorRows``: each spatial point's time series contiguous, i.e. a
  ``(n_rows, n_time)`` matrix flattened row by row.

Block indices in the public contract are 1-based (``i, j = 1..N_t``).
"""

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, TypeVar

import numpy as np

from .errors import CapacityError, DimensionError

DEFAULT_MEMORY_CAP = 2 * 1024 ** 3


class Layout(str, Enum):
    """Storage order of a flattened space-time vector."""
    TIME_MAJOR_BLOCKS = "TimeMajorBlocks"
    SPACE_MAJOR_ROWS = "SpaceMajorRows"


class Direction(str, Enum):
    """How the named operator relates to the map stored in a kernel.

    ``FORWARD``: the kernel is the first block column of the named map itself.
    ``ADJOINT``: the named map is the adjoint of the stored block lower-triangular
    map (``G* = (F Gamma_prior)*`` is stored through ``F Gamma_prior``).
    """
    FORWARD = "forward"
    ADJOINT = "adjoint"


class Provenance(Enum):
    """Which operator a kernel archive holds; the value is the archive code."""
    F = 0
    FQ = 1
    GSTAR = 2
    GQSTAR = 3

    @property
    def direction(self) -> Direction:
        if self in (Provenance.GSTAR, Provenance.GQSTAR):
            return Direction.ADJOINT
        return Direction.FORWARD

    @property
    def label(self) -> str:
        return {0: "F", 1: "Fq", 2: "Gstar", 3: "Gqstar"}[self.value]


@dataclass(frozen=True)
class Dims:
    """Problem dimensions shared by parameters, observations and QoI."""
    n_space: int
    n_sensors: int
    n_qoi: int
    n_time: int
    dt_obs: float

    def __post_init__(self):
        for name in ("n_space", "n_sensors", "n_qoi", "n_time"):
            value = getattr(self, name)
            if int(value) != value or value < 1:
                raise DimensionError(f"Dims.{name} must be an integer >= 1, got {value}")
        if self.n_sensors > self.n_space:
            raise DimensionError(
                f"Dims.n_sensors ({self.n_sensors}) exceeds Dims.n_space ({self.n_space})")
        if not self.dt_obs > 0:
            raise DimensionError(f"Dims.dt_obs must be positive, got {self.dt_obs}")

    @property
    def n_param(self) -> int:
        return self.n_space * self.n_time

    @property
    def n_data(self) -> int:
        return self.n_sensors * self.n_time

    @property
    def n_forecast(self) -> int:
        return self.n_qoi * self.n_time


S = TypeVar("S", bound="SpaceTimeSeries")


@dataclass(frozen=True)
class SpaceTimeSeries:
    """Flat real vector over ``n_rows`` spatial entries and ``n_time`` steps.

    Instances are immutable: ``values`` is copied on construction and marked
    read-only.
    """
    values: np.ndarray
    n_rows: int
    n_time: int
    layout: Layout = Layout.TIME_MAJOR_BLOCKS
    units: str = field(default="", compare=False)

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64).ravel()
        if values.size != self.n_rows * self.n_time:
            raise DimensionError(
                f"{type(self).__name__} expects {self.n_rows} x {self.n_time} = "
                f"{self.n_rows * self.n_time} values, got {values.size}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "layout", Layout(self.layout))

    @classmethod
    def from_rows(cls: type[S], rows: np.ndarray) -> S:
        """Build from a ``(n_rows, n_time)`` matrix; result is SpaceMajorRows."""
        rows = np.asarray(rows, dtype=np.float64)
        if rows.ndim != 2:
            raise DimensionError(f"expected a 2D (rows, time) array, got shape {rows.shape}")
        return cls(rows, rows.shape[0], rows.shape[1], Layout.SPACE_MAJOR_ROWS)

    @classmethod
    def from_blocks(cls: type[S], blocks: np.ndarray) -> S:
        """Build from a ``(n_time, n_rows)`` matrix; result is TimeMajorBlocks."""
        blocks = np.asarray(blocks, dtype=np.float64)
        if blocks.ndim != 2:
            raise DimensionError(f"expected a 2D (time, rows) array, got shape {blocks.shape}")
        return cls(blocks, blocks.shape[1], blocks.shape[0], Layout.TIME_MAJOR_BLOCKS)

    @classmethod
    def zeros(cls: type[S], n_rows: int, n_time: int,
              layout: Layout = Layout.SPACE_MAJOR_ROWS) -> S:
        return cls(np.zeros(n_rows * n_time), n_rows, n_time, layout)

    def rows(self) -> np.ndarray:
        """The ``(n_rows, n_time)`` view, whatever the storage layout."""
        if self.layout is Layout.SPACE_MAJOR_ROWS:
            return self.values.reshape(self.n_rows, self.n_time)
        return self.values.reshape(self.n_time, self.n_rows).T

    def blocks(self) -> np.ndarray:
        """The ``(n_time, n_rows)`` view, whatever the storage layout."""
        if self.layout is Layout.TIME_MAJOR_BLOCKS:
            return self.values.reshape(self.n_time, self.n_rows)
        return self.values.reshape(self.n_rows, self.n_time).T

    def with_values(self: S, values: np.ndarray) -> S:
        """Same shape and layout, new values."""
        return type(self)(values, self.n_rows, self.n_time, self.layout)

    def check_dims(self, n_rows: int, n_time: int) -> None:
        if (self.n_rows, self.n_time) != (n_rows, n_time):
            raise DimensionError(
                f"{type(self).__name__} has shape ({self.n_rows}, {self.n_time}), "
                f"expected ({n_rows}, {n_time})")


@dataclass(frozen=True)
class SpaceTimeField(SpaceTimeSeries):
    """Parameter vector m: seafloor normal velocity (m/s), N_m x N_t."""
    units: str = field(default="m/s", compare=False)


@dataclass(frozen=True)
class ObsSeries(SpaceTimeSeries):
    """Stacked sensor pressures d, N_d x N_t."""
    units: str = field(default="Pa", compare=False)


@dataclass(frozen=True)
class QoISeries(SpaceTimeSeries):
    """Stacked surface-height forecasts q, N_q x N_t."""
    units: str = field(default="m", compare=False)


def reindex(v: S, target_layout: Layout, dims: Optional[Dims] = None) -> S:
    """Permute ``v`` into ``target_layout``; exact, no arithmetic involved.

    ``dims`` optionally checks the length: parameters against ``N_m``, data
    against ``N_d``, QoI against ``N_q``.
    """
    if dims is not None:
        expected_rows = {SpaceTimeField: dims.n_space, ObsSeries: dims.n_sensors,
                         QoISeries: dims.n_qoi}.get(type(v), v.n_rows)
        v.check_dims(expected_rows, dims.n_time)
    target_layout = Layout(target_layout)
    if target_layout is v.layout:
        return v
    matrix = v.rows() if target_layout is Layout.SPACE_MAJOR_ROWS else v.blocks()
    return type(v)(np.ascontiguousarray(matrix), v.n_rows, v.n_time, target_layout)


@dataclass(frozen=True)
class BlockToeplitzKernel:
    """First block column of a block lower-triangular Toeplitz map.

    ``data[s, x, k]`` is the response of output ``s`` at output time ``k + 1``
    to a unit input at column ``x`` and time 1, i.e. block ``F_{k+1,1}``. The lag
    axis is the contiguous one.
    """
    data: np.ndarray
    provenance: Provenance = Provenance.F

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float64)
        if data.ndim != 3:
            raise DimensionError(f"kernel data must be 3D (rows, cols, lags), got shape {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DimensionError("kernel data contains non-finite entries")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "provenance", Provenance(self.provenance))

    @property
    def rows_out(self) -> int:
        return self.data.shape[0]

    @property
    def n_cols(self) -> int:
        return self.data.shape[1]

    @property
    def n_time(self) -> int:
        return self.data.shape[2]

    @property
    def direction(self) -> Direction:
        return self.provenance.direction

    @property
    def nbytes(self) -> int:
        return self.data.nbytes


def toeplitz_block(kernel: BlockToeplitzKernel, i: int, j: int) -> np.ndarray:
    """Dense block ``(i, j)`` (1-based) of the stored lower-triangular map."""
    n_t = kernel.n_time
    if not (1 <= i <= n_t and 1 <= j <= n_t):
        raise IndexError(f"block index ({i}, {j}) outside 1..{n_t}")
    if i < j:
        return np.zeros((kernel.rows_out, kernel.n_cols))
    return kernel.data[:, :, i - j].copy()


def block_rows(kernel: BlockToeplitzKernel, start: int, stop: int) -> np.ndarray:
    """Materialize block rows ``start..stop-1`` (0-based) of the stored map.

    Rows are ordered (time, output) and columns (time, input), i.e. the
    TimeMajorBlocks ordering on both sides.
    """
    n_t, r, c = kernel.n_time, kernel.rows_out, kernel.n_cols
    lag_major = np.concatenate(
        [np.moveaxis(kernel.data, 2, 0), np.zeros((1, r, c))], axis=0)
    i = np.arange(start, stop)[:, None]
    j = np.arange(n_t)[None, :]
    lag = np.where(i >= j, i - j, n_t)
    blocks = lag_major[lag]                      # (rows_blk, n_t, r, c)
    return blocks.transpose(0, 2, 1, 3).reshape((stop - start) * r, n_t * c)


def materialize(kernel: BlockToeplitzKernel, max_bytes: int = DEFAULT_MEMORY_CAP) -> np.ndarray:
    """Full ``(rows_out N_t) x (n_cols N_t)`` matrix in TimeMajorBlocks ordering."""
    n_t = kernel.n_time
    nbytes = kernel.rows_out * n_t * kernel.n_cols * n_t * 8
    if nbytes > max_bytes:
        raise CapacityError(
            f"materialized operator needs {nbytes} bytes, cap is {max_bytes}")
    return block_rows(kernel, 0, n_t)
