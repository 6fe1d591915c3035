"""Run configuration loaded from a YAML file."""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
import yaml

from .core import Dims
from .errors import ConfigError
from .forward_model.acoustic_gravity import SEAWATER_DENSITY, SOUND_SPEED, WaveConfig
from .forward_model.synthetic import BumpParams
from .prior import default_gamma

logger = logging.getLogger('ltibayes')

KNOWN_SECTIONS = ("wave", "prior", "noise", "truth", "dims", "bench", "paths", "lti")


@dataclass(frozen=True)
class PriorSettings:
    gamma: Optional[float] = None
    delta: float = 1.0


@dataclass(frozen=True)
class NoiseSettings:
    rel: float = 0.01
    seed: int = 1
    sigma: Optional[float] = None


@dataclass(frozen=True)
class BenchSettings:
    n_time_sweep: Tuple[int, ...] = (256, 1024, 4096, 8192)
    n_sensors: int = 4
    n_space: int = 4
    infer_n_time: int = 512
    cg_tol: float = 1e-8
    cg_maxiter: int = 5000
    repeats: int = 3
    dense_max_n_time: int = 8192


@dataclass(frozen=True)
class LtiSettings:
    """Random stable state-space system used by the ``lti`` backend."""
    n_state: int = 12
    n_space: int = 8
    n_sensors: int = 3
    n_qoi: int = 2
    seed: int = 0
    spectral_radius: float = 0.9
    h_x: float = 1.0
    dt_obs: float = 1.0


@dataclass
class RunConfig:
    """All sections of a run configuration."""
    wave: Optional[WaveConfig]
    n_time: int
    backend: str = "acoustic_gravity"
    prior: PriorSettings = field(default_factory=PriorSettings)
    noise: NoiseSettings = field(default_factory=NoiseSettings)
    truth: Optional[BumpParams] = None
    bench: BenchSettings = field(default_factory=BenchSettings)
    out_dir: Path = Path("output")
    lti: Optional[LtiSettings] = None
    raw: Dict[str, Any] = field(default_factory=dict)

    @classmethod
    def from_file(cls, path: Path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"configuration file not found: {path}")
        with open(path, 'r', encoding='utf-8') as f:
            try:
                raw = yaml.safe_load(f) or {}
            except yaml.YAMLError as e:
                raise ConfigError(f"could not parse {path}: {e}") from e
        return cls.from_dict(raw)

    @classmethod
    def from_dict(cls, raw: Dict[str, Any]) -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("configuration root must be a mapping")
        unknown = sorted(set(raw) - set(KNOWN_SECTIONS))
        if unknown:
            raise ConfigError(f"unknown configuration section(s): {', '.join(unknown)}")

        wave_raw = dict(_section(raw, "wave"))
        backend = wave_raw.pop("backend", "acoustic_gravity")
        if backend not in ("acoustic_gravity", "lti"):
            raise ConfigError(f"wave.backend must be 'acoustic_gravity' or 'lti', got '{backend}'")
        wave = _wave_config(wave_raw) if backend == "acoustic_gravity" else None
        dims_raw = _section(raw, "dims")
        n_time = _integer("dims.n_time", dims_raw.get("n_time"), minimum=1)
        positions = []
        if wave is not None:
            positions = [("n_sensors", len(wave.sensor_x)), ("n_qoi", len(wave.qoi_x))]
        for key, expected in positions:
            if key in dims_raw and dims_raw[key] != expected:
                raise ConfigError(
                    f"dims.{key} = {dims_raw[key]} disagrees with {expected} positions in [wave]")

        truth_raw = _section(raw, "truth")
        truth = None
        if truth_raw:
            truth = BumpParams(center=float(_required(truth_raw, "truth.center", "center")),
                               width=float(_required(truth_raw, "truth.width", "width")),
                               rise_time=float(_required(truth_raw, "truth.rise_time", "rise_time")),
                               amplitude=float(truth_raw.get("amplitude", 1.0)))

        noise_raw = _section(raw, "noise")
        noise = NoiseSettings(rel=float(noise_raw.get("rel", 0.01)),
                              seed=int(noise_raw.get("seed", 1)),
                              sigma=_optional_float(noise_raw.get("sigma")))
        if noise.rel < 0:
            raise ConfigError(f"noise.rel must be non-negative, got {noise.rel}")
        if noise.sigma is not None and not noise.sigma > 0:
            raise ConfigError(f"noise.sigma must be positive, got {noise.sigma}")

        prior_raw = _section(raw, "prior")
        prior = PriorSettings(gamma=_optional_float(prior_raw.get("gamma")),
                              delta=float(prior_raw.get("delta", 1.0)))

        bench_raw = dict(_section(raw, "bench"))
        if "n_time_sweep" in bench_raw:
            bench_raw["n_time_sweep"] = tuple(int(n) for n in bench_raw["n_time_sweep"])
        try:
            bench = BenchSettings(**bench_raw)
        except TypeError as e:
            raise ConfigError(f"invalid [bench] section: {e}") from e

        lti = None
        if raw.get("lti") is not None or backend == "lti":
            try:
                lti = LtiSettings(**_section(raw, "lti"))
            except TypeError as e:
                raise ConfigError(f"invalid [lti] section: {e}") from e

        out_dir = Path(_section(raw, "paths").get("out_dir", "output"))
        return cls(wave=wave, n_time=n_time, backend=backend, prior=prior, noise=noise,
                   truth=truth, bench=bench, out_dir=out_dir, lti=lti, raw=raw)

    @property
    def dims(self) -> Dims:
        if self.backend == "lti":
            return Dims(self.lti.n_space, self.lti.n_sensors, self.lti.n_qoi, self.n_time,
                        self.lti.dt_obs)
        return Dims(self.wave.nx, len(self.wave.sensor_x), len(self.wave.qoi_x), self.n_time,
                    self.wave.dt_obs)

    @property
    def h_x(self) -> float:
        return self.lti.h_x if self.backend == "lti" else self.wave.h_x

    @property
    def x_nodes(self) -> np.ndarray:
        return np.arange(self.dims.n_space) * self.h_x

    @property
    def prior_gamma(self) -> float:
        return self.prior.gamma if self.prior.gamma is not None else default_gamma(self.h_x)

    def canonical_text(self) -> str:
        """Stable serialization used for the manifest config hash."""
        return yaml.safe_dump(self.raw, sort_keys=True, default_flow_style=False)

    def with_out_dir(self, out_dir: Optional[Path]) -> "RunConfig":
        if out_dir is not None:
            self.out_dir = Path(out_dir)
        return self


def _section(raw: Dict[str, Any], name: str) -> Dict[str, Any]:
    value = raw.get(name) or {}
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a mapping, got {type(value).__name__}")
    return value


def _required(section: Dict[str, Any], label: str, key: str) -> Any:
    if key not in section:
        raise ConfigError(f"missing required field {label}")
    return section[key]


def _integer(label: str, value: Any, minimum: int) -> int:
    if value is None:
        raise ConfigError(f"missing required field {label}")
    if int(value) != value or value < minimum:
        raise ConfigError(f"{label} must be an integer >= {minimum}, got {value}")
    return int(value)


def _optional_float(value: Any) -> Optional[float]:
    return None if value is None else float(value)


def _positions(wave_raw: Dict[str, Any], key: str, count_key: str, length: float,
               h_x: float, stride_key: Optional[str] = None) -> List[float]:
    """Explicit positions, every ``stride``-th bottom node from ``x = 0``, or
    ``count`` evenly spaced interior grid nodes."""
    if key in wave_raw:
        return [float(x) for x in wave_raw.pop(key)]
    if stride_key is not None and stride_key in wave_raw:
        if count_key in wave_raw:
            raise ConfigError(f"[wave] sets both {stride_key} and {count_key}")
        stride = _integer(f"wave.{stride_key}", wave_raw.pop(stride_key), minimum=1)
        n_nodes = int(round(length / h_x)) + 1
        return [float(i * h_x) for i in range(0, n_nodes, stride)]
    if count_key not in wave_raw:
        raise ConfigError(f"[wave] needs either {key} or {count_key}")
    count = _integer(f"wave.{count_key}", wave_raw.pop(count_key), minimum=1)
    spots = np.linspace(0.0, length, count + 2)[1:-1]
    return [float(round(x / h_x) * h_x) for x in spots]


def _wave_config(wave_raw: Dict[str, Any]) -> WaveConfig:
    for key in ("length", "depth", "h_x", "dt_obs"):
        _required(wave_raw, f"wave.{key}", key)
    length, h_x = float(wave_raw.pop("length")), float(wave_raw.pop("h_x"))
    depth = float(wave_raw.pop("depth"))
    h_z = float(wave_raw.pop("h_z", h_x))
    dt_obs = float(wave_raw.pop("dt_obs"))
    sensor_x = _positions(wave_raw, "sensor_x", "n_sensors", length, h_x, "sensor_stride")
    qoi_x = _positions(wave_raw, "qoi_x", "n_qoi", length, h_x)
    rho = float(wave_raw.pop("rho", SEAWATER_DENSITY))
    sound_speed = float(wave_raw.pop("sound_speed", SOUND_SPEED))
    kwargs = dict(rho=rho, bulk_modulus=rho * sound_speed ** 2,
                  gravity=float(wave_raw.pop("gravity", 9.81)),
                  absorbing=bool(wave_raw.pop("absorbing", True)))
    cfl_factor = float(wave_raw.pop("cfl_factor", 0.5))
    substeps = wave_raw.pop("substeps", None)
    if wave_raw:
        raise ConfigError(f"unknown [wave] field(s): {', '.join(sorted(wave_raw))}")
    if substeps is None:
        return WaveConfig.with_cfl(length, depth, h_x, h_z, dt_obs, sensor_x, qoi_x,
                                   cfl_factor=cfl_factor, **kwargs)
    return WaveConfig(length=length, depth=depth, h_x=h_x, h_z=h_z, dt_obs=dt_obs,
                      substeps=int(substeps), sensor_x=tuple(sensor_x), qoi_x=tuple(qoi_x),
                      cfl_factor=cfl_factor, **kwargs)

