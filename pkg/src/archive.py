"""On-disk formats: kernel and dense-matrix archives, raw series, CSV and the manifest.

Binary layouts (all little-endian):

* ``BTPZ1`` kernel: magic, 4 x u64 ``[rows_out, n_cols, N_t, provenance]``,
  then ``rows_out * n_cols * N_t`` f64 in ``[row][col][lag]`` order.
* ``DNSM1`` dense matrix: magic, 3 x u64 ``[rows, cols, symmetric]``, then
  row-major f64.
* raw series: ``<name>.f64`` holds the values in storage order; the one-line
  ``<name>.hdr`` sidecar records kind, dims, layout and units.

Every write goes to a temporary file in the target directory and is moved in
place with ``os.replace``.
"""

import logging
import os
import struct
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd
from numba import njit

from .core import (
    BlockToeplitzKernel,
    Layout,
    ObsSeries,
    Provenance,
    QoISeries,
    SpaceTimeField,
    SpaceTimeSeries,
)
from .errors import ArchiveFormatError, StaleArtifactError

logger = logging.getLogger('ltibayes')

KERNEL_MAGIC = b"BTPZ1"
DENSE_MAGIC = b"DNSM1"
MANIFEST_HEADER = "ltibayes-manifest 1"
SERIES_TYPES = {cls.__name__: cls for cls in (SpaceTimeField, ObsSeries, QoISeries)}

PathLike = Union[str, Path]


@njit(cache=True)
def _fnv1a64(data: np.ndarray) -> np.uint64:
    h = np.uint64(14695981039346656037)
    prime = np.uint64(1099511628211)
    for byte in data:
        h = (h ^ np.uint64(byte)) * prime
    return h


def fnv1a64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    return int(_fnv1a64(np.frombuffer(data, dtype=np.uint8)))


def file_hash(path: PathLike) -> str:
    return f"{fnv1a64(Path(path).read_bytes()):016x}"


def atomic_write_bytes(path: PathLike, data: bytes) -> int:
    """Write ``data`` to ``path`` through a same-directory temp file; returns the byte count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return len(data)


def atomic_write_text(path: PathLike, text: str) -> int:
    return atomic_write_bytes(path, text.encode('utf-8'))


def _read_magic(blob: bytes, magic: bytes, path: Path, n_fields: int) -> Tuple[int, ...]:
    head = len(magic) + 8 * n_fields
    if len(blob) < head or blob[:len(magic)] != magic:
        raise ArchiveFormatError(f"{path}: not a {magic.decode()} archive")
    return struct.unpack(f"<{n_fields}Q", blob[len(magic):head])


# Kernels

def write_kernel(path: PathLike, kernel: BlockToeplitzKernel) -> int:
    header = struct.pack("<4Q", kernel.rows_out, kernel.n_cols, kernel.n_time,
                         kernel.provenance.value)
    return atomic_write_bytes(path, KERNEL_MAGIC + header + kernel.data.astype("<f8").tobytes())


def read_kernel(path: PathLike, expected: Optional[Provenance] = None) -> BlockToeplitzKernel:
    path = Path(path)
    blob = path.read_bytes()
    rows, cols, n_t, code = _read_magic(blob, KERNEL_MAGIC, path, 4)
    try:
        provenance = Provenance(code)
    except ValueError as e:
        raise ArchiveFormatError(f"{path}: unknown provenance code {code}") from e
    if expected is not None and provenance is not expected:
        raise ArchiveFormatError(
            f"{path}: holds a {provenance.label} kernel, expected {expected.label}")
    payload = blob[len(KERNEL_MAGIC) + 32:]
    if len(payload) != 8 * rows * cols * n_t:
        raise ArchiveFormatError(
            f"{path}: payload has {len(payload)} bytes, header implies {8 * rows * cols * n_t}")
    data = np.frombuffer(payload, dtype="<f8").reshape(rows, cols, n_t)
    return BlockToeplitzKernel(data, provenance)


# Dense matrices

def write_dense(path: PathLike, matrix: np.ndarray, symmetric: bool = False) -> int:
    matrix = np.ascontiguousarray(matrix, dtype="<f8")
    if matrix.ndim != 2:
        raise ArchiveFormatError(f"dense archive needs a 2D matrix, got shape {matrix.shape}")
    header = struct.pack("<3Q", matrix.shape[0], matrix.shape[1], int(symmetric))
    return atomic_write_bytes(path, DENSE_MAGIC + header + matrix.tobytes())


def read_dense(path: PathLike) -> Tuple[np.ndarray, bool]:
    path = Path(path)
    blob = path.read_bytes()
    rows, cols, symmetric = _read_magic(blob, DENSE_MAGIC, path, 3)
    payload = blob[len(DENSE_MAGIC) + 24:]
    if len(payload) != 8 * rows * cols:
        raise ArchiveFormatError(
            f"{path}: payload has {len(payload)} bytes, header implies {8 * rows * cols}")
    return np.frombuffer(payload, dtype="<f8").reshape(rows, cols).copy(), bool(symmetric)


# Raw series

def write_series(path: PathLike, series: SpaceTimeSeries) -> int:
    """Write ``<path>.f64`` plus the ``<path>.hdr`` sidecar; ``path`` may carry either suffix."""
    base = Path(path).with_suffix("")
    header = (f"{type(series).__name__} rows={series.n_rows} time={series.n_time} "
              f"layout={series.layout.value} units={series.units or '-'}\n")
    atomic_write_text(base.with_suffix(".hdr"), header)
    return atomic_write_bytes(base.with_suffix(".f64"), series.values.astype("<f8").tobytes())


def read_series(path: PathLike) -> SpaceTimeSeries:
    base = Path(path).with_suffix("")
    hdr = base.with_suffix(".hdr")
    if not hdr.exists():
        raise ArchiveFormatError(f"missing header sidecar {hdr}")
    fields = hdr.read_text(encoding='utf-8').split()
    try:
        kind = SERIES_TYPES[fields[0]]
        meta = dict(item.split("=", 1) for item in fields[1:])
        rows, n_time, layout = int(meta["rows"]), int(meta["time"]), Layout(meta["layout"])
    except (IndexError, KeyError, ValueError) as e:
        raise ArchiveFormatError(f"{hdr}: malformed header ({e})") from e
    values = np.frombuffer(base.with_suffix(".f64").read_bytes(), dtype="<f8")
    if values.size != rows * n_time:
        raise ArchiveFormatError(
            f"{base}.f64 holds {values.size} values, header says {rows} x {n_time}")
    return kind(values, rows, n_time, layout)


# CSV

def write_frame(path: PathLike, frame: pd.DataFrame) -> int:
    return atomic_write_text(path, frame.to_csv(index=False, float_format="%.17g"))


def series_frame(series: SpaceTimeSeries, row_label: str, dt_obs: float) -> pd.DataFrame:
    """Long table with one line per (row, time) entry; ``t`` is the observation time in s."""
    rows = series.rows()
    idx, k = np.meshgrid(np.arange(series.n_rows), np.arange(series.n_time), indexing="ij")
    return pd.DataFrame({row_label: idx.ravel(), "t": (k.ravel() + 1) * dt_obs,
                         "value": rows.ravel()})


def displacement_frame(x: np.ndarray, mean: np.ndarray, std: np.ndarray) -> pd.DataFrame:
    return pd.DataFrame({"x": x, "mean": mean, "std": std})


def forecast_frame(q_map: QoISeries, lower: QoISeries, upper: QoISeries,
                   dt_obs: float) -> pd.DataFrame:
    frame = series_frame(q_map, "qoi_id", dt_obs).rename(columns={"value": "mean"})
    frame["ci_lo"] = lower.rows().ravel()
    frame["ci_hi"] = upper.rows().ravel()
    return frame


# Manifest

@dataclass
class ArtifactEntry:
    name: str
    nbytes: int
    digest: str
    wall_seconds: float


@dataclass
class PhaseEntry:
    name: str
    count: int
    wall_seconds: float


@dataclass
class Manifest:
    """Offline run record: config hash, per-phase timings and artifact hashes."""
    config_hash: str
    phases: List[PhaseEntry] = field(default_factory=list)
    artifacts: Dict[str, ArtifactEntry] = field(default_factory=dict)

    def add_artifact(self, out_dir: Path, name: str, nbytes: int, wall_seconds: float) -> None:
        self.artifacts[name] = ArtifactEntry(name, nbytes, file_hash(out_dir / name), wall_seconds)

    def to_text(self) -> str:
        lines = [MANIFEST_HEADER, f"config {self.config_hash}"]
        lines += [f"phase {p.name} {p.count} {p.wall_seconds:.6f}" for p in self.phases]
        lines += [f"artifact {a.name} {a.nbytes} {a.digest} {a.wall_seconds:.6f}"
                  for a in self.artifacts.values()]
        return "\n".join(lines) + "\n"

    def write(self, path: PathLike) -> int:
        return atomic_write_text(path, self.to_text())

    @classmethod
    def read(cls, path: PathLike) -> "Manifest":
        path = Path(path)
        if not path.exists():
            raise StaleArtifactError(f"no manifest at {path}; run the offline phase first")
        lines = path.read_text(encoding='utf-8').splitlines()
        if not lines or lines[0] != MANIFEST_HEADER:
            raise ArchiveFormatError(f"{path}: not an ltibayes manifest")
        manifest = None
        try:
            for line in lines[1:]:
                parts = line.split()
                if not parts:
                    continue
                if parts[0] == "config":
                    manifest = cls(config_hash=parts[1])
                elif parts[0] == "phase":
                    manifest.phases.append(PhaseEntry(parts[1], int(parts[2]), float(parts[3])))
                elif parts[0] == "artifact":
                    manifest.artifacts[parts[1]] = ArtifactEntry(
                        parts[1], int(parts[2]), parts[3], float(parts[4]))
                else:
                    raise ValueError(f"unknown record '{parts[0]}'")
        except (AttributeError, IndexError, ValueError) as e:
            raise ArchiveFormatError(f"{path}: malformed manifest ({e})") from e
        if manifest is None:
            raise ArchiveFormatError(f"{path}: manifest has no config record")
        return manifest

    def verify(self, out_dir: PathLike, config_hash: Optional[str] = None) -> None:
        """Raise :class:`StaleArtifactError` unless every artifact matches its record."""
        out_dir = Path(out_dir)
        if config_hash is not None and config_hash != self.config_hash:
            raise StaleArtifactError(
                f"artifacts were built for config {self.config_hash}, current config is {config_hash}")
        for entry in self.artifacts.values():
            path = out_dir / entry.name
            if not path.exists():
                raise StaleArtifactError(f"artifact {entry.name} is missing from {out_dir}")
            size = path.stat().st_size
            if size != entry.nbytes:
                raise StaleArtifactError(
                    f"artifact {entry.name} has {size} bytes, manifest records {entry.nbytes}")
            digest = file_hash(path)
            if digest != entry.digest:
                raise StaleArtifactError(
                    f"artifact {entry.name} hash {digest} differs from manifest {entry.digest}")

    def is_current(self, out_dir: PathLike, config_hash: str) -> bool:
        try:
            self.verify(out_dir, config_hash)
        except StaleArtifactError:
            return False
        return True


def config_hash(text: str) -> str:
    return f"{fnv1a64(text.encode('utf-8')):016x}"


def timed_write(writer, *args) -> Tuple[int, float]:
    """Run a ``write_*`` function; returns ``(bytes, wall seconds)``."""
    start = time.perf_counter()
    nbytes = writer(*args)
    return nbytes, time.perf_counter() - start
