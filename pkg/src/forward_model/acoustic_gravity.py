"""2D (x-z slice) acoustic-gravity wave model and its exact discrete adjoint.

Unknowns live on a collocated grid of ``nx x nz`` nodes (z = 0 is the seafloor,
z = H the sea surface): velocities ``u_x, u_z``, pressure ``p`` and the
surface height ``eta`` on the top row. Space is discretized with second-order
central differences in summation-by-parts form; boundary conditions enter as
simultaneous-approximation terms so that the discrete energy

    E = 1/2 sum w (rho |u|^2 + p^2 / K) + 1/2 sum_surface w_x rho g eta^2

is conserved in a closed box and dissipated through the impedance edges.

* surface: ``p = rho g eta`` (penalized in the u_z equation), ``d eta/dt = u_z``
* bottom: ``u . n = -m`` (penalized in the pressure equation)
* lateral: ``u . n = Z^{-1} p`` (penalized in the pressure equation)

Time stepping is classical RK4 with the forcing held constant over each
observation interval of ``substeps`` steps. The adjoint is the exact transpose
of the composed RK4 propagator with the stages reversed.
"""

import logging
import math
from dataclasses import dataclass
from functools import lru_cache
from typing import Dict, Optional, Sequence, Tuple

import numpy as np
import scipy.sparse

from ..core import ObsSeries, QoISeries, SpaceTimeField
from ..errors import CapacityError, ConfigError, DimensionError, InstabilityError
from .interface import SOLVE_COUNTER, ForwardModel
from .lti import LtiSystem

logger = logging.getLogger('ltibayes')

SEAWATER_DENSITY = 1000.0
SOUND_SPEED = 1500.0
GRAVITY = 9.81
MAX_DENSE_STATE = 4000


@dataclass(frozen=True)
class WaveConfig:
    """Geometry, material constants, time step and observation points."""
    length: float
    depth: float
    h_x: float
    h_z: float
    dt_obs: float
    substeps: int
    sensor_x: Tuple[float, ...]
    qoi_x: Tuple[float, ...]
    rho: float = SEAWATER_DENSITY
    bulk_modulus: float = SEAWATER_DENSITY * SOUND_SPEED ** 2
    gravity: float = GRAVITY
    absorbing: bool = True
    cfl_factor: float = 0.5

    def __post_init__(self):
        object.__setattr__(self, "sensor_x", tuple(float(x) for x in self.sensor_x))
        object.__setattr__(self, "qoi_x", tuple(float(x) for x in self.qoi_x))
        for name in ("length", "depth", "h_x", "h_z", "dt_obs", "rho", "bulk_modulus", "gravity"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"wave.{name} must be positive, got {getattr(self, name)}")
        for name, extent, h in (("length", self.length, self.h_x), ("depth", self.depth, self.h_z)):
            cells = extent / h
            if abs(cells - round(cells)) > 1e-9 * max(1.0, cells) or round(cells) < 1:
                raise ConfigError(f"wave.{name} ({extent}) is not a whole number of cells of {h}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ConfigError(f"wave.substeps must be an integer >= 1, got {self.substeps}")
        if not 0 < self.cfl_factor <= 0.5:
            raise ConfigError(f"wave.cfl_factor must lie in (0, 0.5], got {self.cfl_factor}")
        limit = self.cfl_factor * min(self.h_x, self.h_z) / self.sound_speed
        if self.dt_sim > limit * (1 + 1e-12):
            raise ConfigError(
                f"CFL check failed: dt_sim = {self.dt_sim:.6g} s exceeds "
                f"{self.cfl_factor} * min(h_x, h_z) / c = {limit:.6g} s; raise wave.substeps")
        for name, points in (("sensor_x", self.sensor_x), ("qoi_x", self.qoi_x)):
            if not points:
                raise ConfigError(f"wave.{name} must list at least one position")
            for x in points:
                if not 0.0 <= x <= self.length:
                    raise ConfigError(f"wave.{name} position {x} lies outside [0, {self.length}]")

    @classmethod
    def with_cfl(cls, length: float, depth: float, h_x: float, h_z: float, dt_obs: float,
                 sensor_x: Sequence[float], qoi_x: Sequence[float],
                 cfl_factor: float = 0.5, **kwargs) -> "WaveConfig":
        """Choose the smallest substep count meeting the CFL bound."""
        rho = kwargs.get("rho", SEAWATER_DENSITY)
        bulk = kwargs.get("bulk_modulus", rho * SOUND_SPEED ** 2)
        c = math.sqrt(bulk / rho)
        limit = cfl_factor * min(h_x, h_z) / c
        substeps = max(1, math.ceil(dt_obs / limit - 1e-12))
        return cls(length=length, depth=depth, h_x=h_x, h_z=h_z, dt_obs=dt_obs,
                   substeps=substeps, sensor_x=tuple(sensor_x), qoi_x=tuple(qoi_x),
                   cfl_factor=cfl_factor, **kwargs)

    @property
    def sound_speed(self) -> float:
        return math.sqrt(self.bulk_modulus / self.rho)

    @property
    def impedance_inv(self) -> float:
        return 1.0 / (self.rho * self.sound_speed) if self.absorbing else 0.0

    @property
    def dt_sim(self) -> float:
        return self.dt_obs / self.substeps

    @property
    def nx(self) -> int:
        return int(round(self.length / self.h_x)) + 1

    @property
    def nz(self) -> int:
        return int(round(self.depth / self.h_z)) + 1

    @property
    def x_nodes(self) -> np.ndarray:
        return np.arange(self.nx) * self.h_x

    @property
    def sensor_nodes(self) -> np.ndarray:
        """Bottom node index of each sensor (nearest node)."""
        return np.array([int(round(x / self.h_x)) for x in self.sensor_x], dtype=np.int64)

    @property
    def qoi_nodes(self) -> np.ndarray:
        return np.array([int(round(x / self.h_x)) for x in self.qoi_x], dtype=np.int64)


@dataclass
class WaveState:
    """Discrete fields; grids are indexed ``[z, x]``."""
    u_x: np.ndarray
    u_z: np.ndarray
    p: np.ndarray
    eta: np.ndarray

    @classmethod
    def zeros(cls, cfg: WaveConfig) -> "WaveState":
        shape = (cfg.nz, cfg.nx)
        return cls(np.zeros(shape), np.zeros(shape), np.zeros(shape), np.zeros(cfg.nx))

    @classmethod
    def pressure_pulse(cls, cfg: WaveConfig, x0: float, z0: float, width: float,
                       amplitude: float = 1.0) -> "WaveState":
        """Fluid at rest with a Gaussian pressure bump centred at ``(x0, z0)``."""
        state = cls.zeros(cfg)
        z = np.arange(cfg.nz)[:, None] * cfg.h_z
        x = cfg.x_nodes[None, :]
        state.p = amplitude * np.exp(-((x - x0) ** 2 + (z - z0) ** 2) / (2 * width ** 2))
        return state

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.u_x.ravel(), self.u_z.ravel(), self.p.ravel(), self.eta])

    @classmethod
    def from_vector(cls, x: np.ndarray, cfg: WaveConfig) -> "WaveState":
        n = cfg.nx * cfg.nz
        if x.size != 3 * n + cfg.nx:
            raise DimensionError(f"state vector has {x.size} entries, expected {3 * n + cfg.nx}")
        shape = (cfg.nz, cfg.nx)
        return cls(x[:n].reshape(shape).copy(), x[n:2 * n].reshape(shape).copy(),
                   x[2 * n:3 * n].reshape(shape).copy(), x[3 * n:].copy())

    def is_finite(self) -> bool:
        return all(np.all(np.isfinite(a)) for a in (self.u_x, self.u_z, self.p, self.eta))


def sbp_first_derivative(n: int, h: float) -> Tuple[scipy.sparse.csr_matrix, np.ndarray]:
    """Second-order SBP first derivative ``D = H^{-1} Q`` and the diagonal of ``H``."""
    if n < 2:
        raise ConfigError("a grid direction needs at least 2 nodes")
    weights = np.full(n, h)
    weights[0] = weights[-1] = h / 2
    q = scipy.sparse.diags([-0.5 * np.ones(n - 1), 0.5 * np.ones(n - 1)], [-1, 1], format="lil")
    q[0, 0] = -0.5
    q[n - 1, n - 1] = 0.5
    return (scipy.sparse.diags(1.0 / weights) @ q.tocsr()).tocsr(), weights


def _selector(n: int, nodes: np.ndarray) -> scipy.sparse.csr_matrix:
    diag = np.zeros(n)
    diag[nodes] = 1.0
    return scipy.sparse.diags(diag, format="csr")


class AcousticGravityModel(ForwardModel):
    """Semi-discrete system ``dx/dt = A x + B m`` advanced with RK4."""

    def __init__(self, cfg: WaveConfig):
        self.cfg = cfg
        nx, nz = cfg.nx, cfg.nz
        n = nx * nz
        self._n = n
        self.n_state = 3 * n + nx

        dx, wx = sbp_first_derivative(nx, cfg.h_x)
        dz, wz = sbp_first_derivative(nz, cfg.h_z)
        self.weights_x = wx
        self.weights = np.outer(wz, wx).ravel()
        dx2 = scipy.sparse.kron(scipy.sparse.identity(nz), dx, format="csr")
        dz2 = scipy.sparse.kron(dz, scipy.sparse.identity(nx), format="csr")

        cols = np.arange(nx)
        left = np.arange(nz) * nx
        right = left + nx - 1
        bottom = cols
        top = (nz - 1) * nx + cols
        self._top = top
        hwx, hwz = wx[0], wz[0]
        rho, bulk, g = cfg.rho, cfg.bulk_modulus, cfg.gravity

        s_left, s_right = _selector(n, left), _selector(n, right)
        s_bottom, s_top = _selector(n, bottom), _selector(n, top)
        e_top = scipy.sparse.csr_matrix((np.ones(nx), (top, cols)), shape=(n, nx))

        a_ux_p = -dx2 / rho
        a_uz_p = -dz2 / rho + s_top / (rho * hwz)
        a_uz_eta = -(g / hwz) * e_top
        a_p_ux = -bulk * dx2 + (bulk / hwx) * (s_right - s_left)
        a_p_uz = -bulk * dz2 - (bulk / hwz) * s_bottom
        a_p_p = -(bulk * cfg.impedance_inv / hwx) * (s_left + s_right)
        a_eta_uz = e_top.T

        self.A = scipy.sparse.bmat([
            [None, None, a_ux_p, None],
            [None, None, a_uz_p, a_uz_eta],
            [a_p_ux, a_p_uz, a_p_p, None],
            [None, a_eta_uz, None, scipy.sparse.csr_matrix((nx, nx))],
        ], format="csr")
        self.A_T = self.A.T.tocsr()
        self.B = scipy.sparse.csr_matrix(
            (np.full(nx, bulk / hwz), (2 * n + bottom, cols)), shape=(self.n_state, nx))
        self.B_T = self.B.T.tocsr()
        self.sensor_index = 2 * n + bottom[cfg.sensor_nodes]
        self.qoi_index = 3 * n + cfg.qoi_nodes

    @property
    def n_space(self) -> int:
        return self.cfg.nx

    @property
    def n_sensors(self) -> int:
        return len(self.cfg.sensor_x)

    @property
    def n_qoi(self) -> int:
        return len(self.cfg.qoi_x)

    def get_model_name(self) -> str:
        return "acoustic_gravity"

    def get_configuration(self) -> Dict[str, object]:
        cfg = self.cfg
        return {"nx": cfg.nx, "nz": cfg.nz, "dt_sim": cfg.dt_sim, "substeps": cfg.substeps,
                "sound_speed": cfg.sound_speed, "impedance_inv": cfg.impedance_inv}

    def rk4_step(self, x: np.ndarray, forcing: np.ndarray) -> np.ndarray:
        """One RK4 step of length ``dt_sim`` with ``forcing = B m`` held fixed."""
        h, a = self.cfg.dt_sim, self.A
        k1 = a @ x + forcing
        k2 = a @ (x + 0.5 * h * k1) + forcing
        k3 = a @ (x + 0.5 * h * k2) + forcing
        k4 = a @ (x + h * k3) + forcing
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    def rk4_step_adjoint(self, lam: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Transpose of :meth:`rk4_step`: returns the costate and the ``B^T`` sensitivity."""
        h, a_t = self.cfg.dt_sim, self.A_T
        kb1 = (h / 6.0) * lam
        kb2 = (h / 3.0) * lam
        kb3 = (h / 3.0) * lam
        kb4 = (h / 6.0) * lam
        xb = lam.copy()
        yb = a_t @ kb4
        sb = kb4.copy()
        xb += yb
        kb3 = kb3 + h * yb
        yb = a_t @ kb3
        sb += kb3
        xb += yb
        kb2 = kb2 + 0.5 * h * yb
        yb = a_t @ kb2
        sb += kb2
        xb += yb
        kb1 = kb1 + 0.5 * h * yb
        xb += a_t @ kb1
        sb += kb1
        return xb, self.B_T @ sb

    def step(self, state: WaveState, forcing_bottom: np.ndarray) -> WaveState:
        """Advance one ``dt_sim`` with bottom velocity ``forcing_bottom`` (length nx)."""
        forcing_bottom = np.asarray(forcing_bottom, dtype=np.float64)
        if forcing_bottom.shape != (self.cfg.nx,):
            raise DimensionError(f"bottom forcing must have {self.cfg.nx} entries")
        x = self.rk4_step(state.to_vector(), self.B @ forcing_bottom)
        self._check_finite(x)
        return WaveState.from_vector(x, self.cfg)

    def run_free(self, state: WaveState, n_steps: int) -> WaveState:
        """Unforced evolution over ``n_steps`` substeps."""
        SOLVE_COUNTER.increment()
        x = state.to_vector()
        zero = np.zeros(self.n_state)
        for _ in range(n_steps):
            x = self.rk4_step(x, zero)
        self._check_finite(x)
        return WaveState.from_vector(x, self.cfg)

    def simulate_forward(self, m: SpaceTimeField) -> Tuple[ObsSeries, QoISeries]:
        if m.n_rows != self.n_space:
            raise DimensionError(f"parameter field has {m.n_rows} rows, model has {self.n_space}")
        d, q = self.forward_rows(m.rows()[None])
        return ObsSeries.from_rows(d[0]), QoISeries.from_rows(q[0])

    def forward_rows(self, rows: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Forward sweeps for a batch of ``(b, N_m, N_t)`` inputs, advanced together.

        Returns ``(b, N_d, N_t)`` pressures and ``(b, N_q, N_t)`` surface heights;
        counts as ``b`` solves.
        """
        batch, n_rows, n_time = rows.shape
        if n_rows != self.n_space:
            raise DimensionError(f"parameter field has {n_rows} rows, model has {self.n_space}")
        SOLVE_COUNTER.increment(batch)
        d = np.empty((batch, self.n_sensors, n_time))
        q = np.empty((batch, self.n_qoi, n_time))
        x = np.zeros((self.n_state, batch))
        for i in range(n_time):
            forcing = self.B @ rows[:, :, i].T
            for _ in range(self.cfg.substeps):
                x = self.rk4_step(x, forcing)
            self._check_finite(x)
            d[:, :, i] = x[self.sensor_index].T
            q[:, :, i] = x[self.qoi_index].T
        return d, q

    def simulate_adjoint(self, w_obs: Optional[ObsSeries], w_qoi: Optional[QoISeries],
                         n_time: int) -> SpaceTimeField:
        wd = None if w_obs is None else w_obs.rows()
        wq = None if w_qoi is None else w_qoi.rows()
        if wd is not None and wd.shape != (self.n_sensors, n_time):
            raise DimensionError(f"observation weights have shape {wd.shape[::-1]}")
        if wq is not None and wq.shape != (self.n_qoi, n_time):
            raise DimensionError(f"QoI weights have shape {wq.shape[::-1]}")
        out = self.adjoint_rows(None if wd is None else wd[None],
                                None if wq is None else wq[None], n_time)
        return SpaceTimeField.from_rows(out[0])

    def adjoint_rows(self, w_obs: Optional[np.ndarray], w_qoi: Optional[np.ndarray],
                     n_time: int) -> np.ndarray:
        """Adjoint sweeps for batches of ``(b, N_d, N_t)`` / ``(b, N_q, N_t)`` weights.

        Returns the ``(b, N_m, N_t)`` sensitivities; counts as ``b`` solves.
        """
        batch = (w_obs if w_obs is not None else w_qoi).shape[0]
        SOLVE_COUNTER.increment(batch)
        out = np.empty((batch, self.n_space, n_time))
        lam = np.zeros((self.n_state, batch))
        for i in reversed(range(n_time)):
            if w_obs is not None:
                np.add.at(lam, self.sensor_index, w_obs[:, :, i].T)
            if w_qoi is not None:
                np.add.at(lam, self.qoi_index, w_qoi[:, :, i].T)
            acc = np.zeros((self.n_space, batch))
            for _ in range(self.cfg.substeps):
                lam, grad = self.rk4_step_adjoint(lam)
                acc += grad
            self._check_finite(lam)
            out[:, :, i] = acc.T
        return out

    def energy(self, state: WaveState) -> float:
        """Discrete energy in joules per unit strike length."""
        cfg = self.cfg
        w = self.weights.reshape(cfg.nz, cfg.nx)
        volume = np.sum(w * (cfg.rho * (state.u_x ** 2 + state.u_z ** 2)
                             + state.p ** 2 / cfg.bulk_modulus))
        surface = np.sum(self.weights_x * cfg.rho * cfg.gravity * state.eta ** 2)
        return 0.5 * (volume + surface)

    def as_lti_system(self) -> LtiSystem:
        """Materialize the observation-interval propagator (tiny grids only)."""
        if self.n_state > MAX_DENSE_STATE:
            raise CapacityError(
                f"dense propagator needs n_state <= {MAX_DENSE_STATE}, got {self.n_state}")
        h = self.cfg.dt_sim
        ha = h * self.A.toarray()
        eye = np.eye(self.n_state)
        ha2 = ha @ ha
        ha3 = ha2 @ ha
        step = eye + ha + ha2 / 2 + ha3 / 6 + ha3 @ ha / 24
        inject = h * (eye + ha / 2 + ha2 / 6 + ha3 / 24) @ self.B.toarray()
        a_obs = np.eye(self.n_state)
        b_obs = np.zeros_like(inject)
        for _ in range(self.cfg.substeps):
            b_obs = step @ b_obs + inject
            a_obs = step @ a_obs
        c = np.zeros((self.n_sensors, self.n_state))
        c[np.arange(self.n_sensors), self.sensor_index] = 1.0
        c_q = np.zeros((self.n_qoi, self.n_state))
        c_q[np.arange(self.n_qoi), self.qoi_index] = 1.0
        return LtiSystem(a_obs, b_obs, c, c_q)

    def _check_finite(self, x: np.ndarray) -> None:
        if not np.all(np.isfinite(x)):
            limit = self.cfg.cfl_factor * min(self.cfg.h_x, self.cfg.h_z) / self.cfg.sound_speed
            raise InstabilityError(
                f"non-finite wave state; check the CFL condition dt_sim = {self.cfg.dt_sim:.6g} s "
                f"<= {limit:.6g} s")


@lru_cache(maxsize=8)
def model_for(cfg: WaveConfig) -> AcousticGravityModel:
    """Assembled model for ``cfg``; assembly is cached per configuration."""
    return AcousticGravityModel(cfg)


def step(state: WaveState, forcing_bottom: np.ndarray, cfg: WaveConfig) -> WaveState:
    return model_for(cfg).step(state, forcing_bottom)


def simulate_forward(m: SpaceTimeField, cfg: WaveConfig) -> Tuple[ObsSeries, QoISeries]:
    return model_for(cfg).simulate_forward(m)


def adjoint_kernel_for_sensor(j: int, cfg: WaveConfig, n_time: int) -> np.ndarray:
    return model_for(cfg).kernel_for_sensor(j, n_time)


def adjoint_kernel_for_qoi(j: int, cfg: WaveConfig, n_time: int) -> np.ndarray:
    return model_for(cfg).kernel_for_qoi(j, n_time)


def energy(state: WaveState, cfg: WaveConfig) -> float:
    return model_for(cfg).energy(state)
