"""Data-space Bayesian inversion and QoI forecasting (Phases 2b-4).

All dense data-space objects are indexed in SpaceMajorRows order, i.e. sensor
``s`` at observation time ``t`` (0-based) is entry ``s * N_t + t``; QoI
vectors use the same convention. With ``G = F Gamma_prior`` the posterior
quantities follow from the Sherman-Morrison-Woodbury identity:

* ``K = sigma^2 I + F G*``                      (data-space Hessian)
* ``m_map = G* K^{-1} d_obs``
* ``Q = F_q G* K^{-1} = (K^{-1} F G_q*)^T``        (data-to-QoI map)
* ``Gamma_post(q) = F_q G_q* - (F G_q*)^T K^{-1} (F G_q*)``

The online methods (:meth:`BayesEngine.infer_map`, :meth:`BayesEngine.predict_qoi`)
only read the immutable offline artifacts and never run the wave solver.
"""

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, Optional, Tuple

import numpy as np
import scipy.linalg
import scipy.sparse.linalg
import scipy.stats
from tqdm import tqdm

from .core import DEFAULT_MEMORY_CAP, Dims, Layout, ObsSeries, QoISeries, SpaceTimeField, reindex
from .errors import CapacityError, ConfigError, DimensionError, NumericalError, StateError
from .fft_matvec import (
    MatvecPlan,
    apply,
    apply_adjoint,
    apply_adjoint_rows,
    apply_operator,
    apply_rows,
    check_plan_compatible,
)
from .prior import PriorOp, apply_cov, apply_precision

logger = logging.getLogger('ltibayes')

Z_95 = 1.96
COLUMN_BATCH_BYTES = 256 * 1024 ** 2


@dataclass
class DataSpaceHessian:
    """``K = Gamma_noise + F G*`` and its lower Cholesky factor."""
    K: np.ndarray
    sigma2: float
    chol: Optional[np.ndarray] = None
    asymmetry: float = 0.0

    @property
    def size(self) -> int:
        return self.K.shape[0]

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """``K^{-1} rhs`` as a forward then a backward triangular solve on ``chol``."""
        if self.chol is None:
            raise StateError("data-space Hessian is not factorized; run factorize first")
        y = scipy.linalg.solve_triangular(self.chol, rhs, lower=True, check_finite=False)
        return scipy.linalg.solve_triangular(self.chol, y, lower=True, trans='T',
                                             check_finite=False)


@dataclass
class QoIMaps:
    """Data-to-QoI map ``Q`` and the QoI posterior covariance."""
    Q: np.ndarray
    qoi_cov: np.ndarray
    prior_qoi_cov: Optional[np.ndarray] = None


@dataclass
class PosteriorSummary:
    m_map: SpaceTimeField
    displacement: np.ndarray
    pointwise_std: np.ndarray
    q_map: QoISeries
    ci_lower: QoISeries
    ci_upper: QoISeries
    level: float = 0.95
    timings: Dict[str, float] = field(default_factory=dict)


def _batch_size(n_columns: int, bytes_per_column: int) -> int:
    return max(1, min(n_columns, COLUMN_BATCH_BYTES // max(1, bytes_per_column)))


def _assemble_columns(apply_batch: Callable[[np.ndarray], np.ndarray], n_rows: int, n_time: int,
                      n_out: int, batch: int, desc: str, show_progress: bool) -> np.ndarray:
    """Columns ``apply_batch(E)`` for unit inputs ``E`` of shape ``(b, n_rows, N_t)``.

    Returns the ``(n_out, n_rows * N_t)`` matrix whose column ``i`` is the
    flattened response to unit vector ``e_i``.
    """
    n_in = n_rows * n_time
    out = np.empty((n_out, n_in))
    starts = range(0, n_in, batch)
    for start in tqdm(starts, desc=desc, disable=not show_progress):
        stop = min(n_in, start + batch)
        unit = np.zeros((stop - start, n_in))
        unit[np.arange(stop - start), np.arange(start, stop)] = 1.0
        response = apply_batch(unit.reshape(stop - start, n_rows, n_time))
        out[:, start:stop] = response.reshape(stop - start, n_out).T
    return out


def form_K(plan_f: MatvecPlan, plan_gstar: MatvecPlan, sigma2: float, fused: bool = True,
           show_progress: bool = False, max_bytes: int = DEFAULT_MEMORY_CAP) -> DataSpaceHessian:
    """Assemble ``K e_i = sigma^2 e_i + F (G* e_i)`` for every data unit vector.

    ``fused`` pushes batches of unit vectors through both FFT matvecs at once;
    otherwise one column is formed per pair of matvecs. ``K`` is symmetrized
    once after assembly.
    """
    check_plan_compatible(plan_f, plan_gstar)
    if plan_f.rows_out != plan_gstar.rows_out:
        raise DimensionError(
            f"F has {plan_f.rows_out} sensors but G* was built for {plan_gstar.rows_out}")
    if not sigma2 > 0:
        raise ConfigError(f"noise variance must be positive, got {sigma2}")
    n_d, n_t = plan_f.rows_out, plan_f.n_time
    n = n_d * n_t
    if 8 * n * n > max_bytes:
        raise CapacityError(f"K needs {8 * n * n} bytes, cap is {max_bytes}")

    def forward_of_gstar(unit: np.ndarray) -> np.ndarray:
        return apply_rows(plan_f, apply_adjoint_rows(plan_gstar, unit))

    bytes_per_column = plan_f.scratch_bytes() + 8 * n
    batch = _batch_size(n, bytes_per_column) if fused else 1
    K = _assemble_columns(forward_of_gstar, n_d, n_t, n, batch, "Assembling K", show_progress)
    K[np.diag_indices(n)] += sigma2

    norm = np.linalg.norm(K)
    asymmetry = float(np.linalg.norm(K - K.T) / norm) if norm > 0 else 0.0
    logger.debug(f"K assembled: {n} x {n}, relative asymmetry {asymmetry:.3e}")
    K = 0.5 * (K + K.T)
    return DataSpaceHessian(K=K, sigma2=float(sigma2), asymmetry=asymmetry)


def factorize(hessian: DataSpaceHessian) -> DataSpaceHessian:
    """Dense lower Cholesky factor of ``K``, stored on ``hessian``."""
    try:
        chol, _ = scipy.linalg.cho_factor(hessian.K, lower=True, check_finite=True)
    except (np.linalg.LinAlgError, ValueError) as e:
        min_eig = scipy.linalg.eigvalsh(hessian.K, subset_by_index=[0, 0])[0]
        raise NumericalError(
            f"Cholesky factorization of K failed ({e}); smallest eigenvalue {min_eig:.6e}") from e
    hessian.chol = np.tril(chol)
    return hessian


class BayesEngine:
    """Offline artifacts plus the online inference path.

    ``plan_gstar`` and ``plan_gqstar`` are plans of kernels with ``GSTAR`` /
    ``GQSTAR`` provenance, i.e. stored through ``G = F Gamma_prior``.
    """

    def __init__(self, dims: Dims, sigma: float, plan_f: Optional[MatvecPlan] = None,
                 plan_gstar: Optional[MatvecPlan] = None, plan_fq: Optional[MatvecPlan] = None,
                 plan_gqstar: Optional[MatvecPlan] = None, prior: Optional[PriorOp] = None):
        if not sigma > 0:
            raise ConfigError(f"noise sigma must be positive, got {sigma}")
        self.dims = dims
        self.sigma = float(sigma)
        self.plan_f = plan_f
        self.plan_gstar = plan_gstar
        self.plan_fq = plan_fq
        self.plan_gqstar = plan_gqstar
        self.prior = prior
        self.hessian: Optional[DataSpaceHessian] = None
        self.qoi: Optional[QoIMaps] = None
        for p, rows in ((plan_f, dims.n_sensors), (plan_gstar, dims.n_sensors),
                        (plan_fq, dims.n_qoi), (plan_gqstar, dims.n_qoi)):
            if p is not None and (p.rows_out, p.n_cols, p.n_time) != (rows, dims.n_space, dims.n_time):
                raise DimensionError(
                    f"plan shape ({p.rows_out}, {p.n_cols}, {p.n_time}) does not match dims "
                    f"({rows}, {dims.n_space}, {dims.n_time})")

    @property
    def sigma2(self) -> float:
        return self.sigma ** 2

    @classmethod
    def from_artifacts(cls, dims: Dims, sigma: float, chol: np.ndarray, q_map: np.ndarray,
                       qoi_cov: np.ndarray, plan_gstar: MatvecPlan) -> "BayesEngine":
        """Online engine from persisted artifacts; ``K`` itself is not needed."""
        engine = cls(dims, sigma, plan_gstar=plan_gstar)
        engine.hessian = DataSpaceHessian(K=np.empty((0, 0)), sigma2=engine.sigma2, chol=chol)
        engine.qoi = QoIMaps(Q=q_map, qoi_cov=qoi_cov)
        return engine

    def _require(self, *names: str) -> None:
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise StateError(f"engine is missing offline artifacts: {', '.join(missing)}")

    # Phase 2b

    def form_K(self, fused: bool = True, show_progress: bool = False) -> DataSpaceHessian:
        self._require("plan_f", "plan_gstar")
        self.hessian = form_K(self.plan_f, self.plan_gstar, self.sigma2, fused=fused,
                              show_progress=show_progress)
        return self.hessian

    def factorize(self) -> DataSpaceHessian:
        self._require("hessian")
        return factorize(self.hessian)

    # Phase 3

    def form_qoi_maps(self, show_progress: bool = False) -> QoIMaps:
        """``Q`` and ``Gamma_post(q)`` from ``N_q N_t`` right-hand sides against ``K``."""
        self._require("plan_f", "plan_fq", "plan_gqstar", "hessian")
        n_q, n_t = self.dims.n_qoi, self.dims.n_time
        n_f = n_q * n_t
        n_d = self.dims.n_sensors * n_t
        per_column = self.plan_f.scratch_bytes() + 8 * n_d
        batch = _batch_size(n_f, per_column)

        def gqstar(unit: np.ndarray) -> np.ndarray:
            return apply_adjoint_rows(self.plan_gqstar, unit)

        def data_and_qoi(unit: np.ndarray) -> np.ndarray:
            m = gqstar(unit)
            return np.concatenate([apply_rows(self.plan_f, m).reshape(len(unit), -1),
                                   apply_rows(self.plan_fq, m).reshape(len(unit), -1)], axis=1)

        both = _assemble_columns(data_and_qoi, n_q, n_t, n_d + n_f, batch,
                                 "Assembling F Gq*", show_progress)
        f_gq = both[:n_d]
        prior_q = 0.5 * (both[n_d:] + both[n_d:].T)
        x = self.hessian.solve(f_gq)
        q_map = x.T
        cov = prior_q - f_gq.T @ x
        cov = 0.5 * (cov + cov.T)
        self._check_covariance(cov)
        self.qoi = QoIMaps(Q=q_map, qoi_cov=cov, prior_qoi_cov=prior_q)
        return self.qoi

    def form_Q(self) -> np.ndarray:
        if self.qoi is None:
            self.form_qoi_maps()
        return self.qoi.Q

    def form_qoi_cov(self) -> np.ndarray:
        if self.qoi is None:
            self.form_qoi_maps()
        return self.qoi.qoi_cov

    @staticmethod
    def _check_covariance(cov: np.ndarray) -> None:
        scale = np.linalg.norm(cov)
        worst = float(np.min(np.diag(cov))) if cov.size else 0.0
        if worst < -1e-10 * scale:
            raise NumericalError(
                f"QoI posterior covariance has diagonal entry {worst:.3e} below "
                f"-1e-10 * {scale:.3e}")

    def offline(self, show_progress: bool = False) -> "BayesEngine":
        self.form_K(show_progress=show_progress)
        self.factorize()
        self.form_qoi_maps(show_progress=show_progress)
        return self

    # Phase 4

    def _data_vector(self, d_obs: ObsSeries) -> np.ndarray:
        d_obs.check_dims(self.dims.n_sensors, self.dims.n_time)
        return np.ascontiguousarray(d_obs.rows()).reshape(-1)

    def infer_map(self, d_obs: ObsSeries) -> SpaceTimeField:
        """``m_map = G* K^{-1} d_obs``: two triangular solves and one FFT matvec."""
        self._require("hessian", "plan_gstar")
        w = self.hessian.solve(self._data_vector(d_obs))
        return apply_operator(self.plan_gstar,
                              ObsSeries.from_rows(w.reshape(self.dims.n_sensors, self.dims.n_time)))

    def predict_qoi(self, d_obs: ObsSeries, level: float = 0.95
                    ) -> Tuple[QoISeries, QoISeries, QoISeries]:
        """``q_map = Q d_obs`` with pointwise credible bounds at ``level``."""
        self._require("qoi")
        if not 0 < level < 1:
            raise ConfigError(f"credible level must lie in (0, 1), got {level}")
        shape = (self.dims.n_qoi, self.dims.n_time)
        q = self.qoi.Q @ self._data_vector(d_obs)
        z = Z_95 if level == 0.95 else float(scipy.stats.norm.ppf(0.5 + level / 2))
        half = z * np.sqrt(np.clip(np.diag(self.qoi.qoi_cov), 0.0, None))
        return (QoISeries.from_rows(q.reshape(shape)),
                QoISeries.from_rows((q - half).reshape(shape)),
                QoISeries.from_rows((q + half).reshape(shape)))

    def integrate_displacement(self, m: SpaceTimeField) -> np.ndarray:
        return integrate_displacement(m, self.dims.dt_obs)

    def pointwise_param_std(self, n_probes: int, seed: int) -> Tuple[np.ndarray, np.ndarray]:
        """Pointwise std of the posterior seafloor displacement ``D m``.

        The prior part ``N_t dt^2 diag(Gamma_x)`` is exact. The data-informed
        reduction ``diag(D G* K^{-1} G D^T)`` is estimated with Rademacher probes,
        each costing one K-solve and two kernel matvecs. Returns the std and the
        standard error of the variance estimate.
        """
        if n_probes < 1:
            raise ConfigError(f"n_probes must be >= 1, got {n_probes}")
        self._require("hessian", "plan_gstar", "prior")
        n_m, n_t, dt = self.dims.n_space, self.dims.n_time, self.dims.dt_obs
        rng = np.random.default_rng(seed)
        z = rng.choice([-1.0, 1.0], size=(n_probes, n_m))
        lifted = np.repeat(dt * z[:, :, None], n_t, axis=2)
        gd = apply_rows(self.plan_gstar, lifted).reshape(n_probes, -1)
        w = self.hessian.solve(gd.T).T.reshape(n_probes, self.dims.n_sensors, n_t)
        reduced = dt * apply_adjoint_rows(self.plan_gstar, w).sum(axis=2)
        samples = z * reduced
        reduction = samples.mean(axis=0)
        stderr = (samples.std(axis=0, ddof=1) / np.sqrt(n_probes)) if n_probes > 1 \
            else np.full(n_m, np.inf)
        prior_var = n_t * dt ** 2 * np.diag(self.prior.dense_cov())
        variance = prior_var - reduction
        if np.any(variance < 0):
            logger.debug(f"⚠ {int(np.sum(variance < 0))} probe variance estimates below zero, clipped")
        return np.sqrt(np.clip(variance, 0.0, None)), stderr

    def summarize(self, d_obs: ObsSeries, level: float = 0.95, n_probes: int = 0,
                  seed: int = 0) -> PosteriorSummary:
        timings = {}
        start = time.perf_counter()
        m_map = self.infer_map(d_obs)
        timings["infer_map"] = time.perf_counter() - start
        start = time.perf_counter()
        q_map, lo, hi = self.predict_qoi(d_obs, level)
        timings["predict_qoi"] = time.perf_counter() - start
        if n_probes > 0:
            start = time.perf_counter()
            std, _ = self.pointwise_param_std(n_probes, seed)
            timings["pointwise_std"] = time.perf_counter() - start
        else:
            std = np.full(self.dims.n_space, np.nan)
        return PosteriorSummary(m_map=m_map, displacement=self.integrate_displacement(m_map),
                                pointwise_std=std, q_map=q_map, ci_lower=lo, ci_upper=hi,
                                level=level, timings=timings)

    # Diagnostics

    def smw_residual(self, m_map: SpaceTimeField, d_obs: ObsSeries) -> float:
        """Relative residual of ``(F^T F / sigma^2 + Gamma_prior^{-1}) m = F^T d / sigma^2``."""
        self._require("plan_f", "prior")
        rhs = apply_adjoint(self.plan_f, reindex(d_obs, Layout.SPACE_MAJOR_ROWS)).rows() / self.sigma2
        m_rows = reindex(m_map, Layout.SPACE_MAJOR_ROWS)
        lhs = apply_adjoint(self.plan_f, apply(self.plan_f, m_rows)).rows() / self.sigma2
        lhs = lhs + apply_precision(self.prior, m_rows).rows()
        scale = np.linalg.norm(rhs)
        residual = np.linalg.norm(lhs - rhs)
        return float(residual / scale) if scale > 0 else float(residual)

    def data_informed_spectrum(self) -> Tuple[np.ndarray, int]:
        """Eigenvalues of ``sigma^-2 F Gamma_prior F^T`` (descending) and how many exceed 1."""
        self._require("hessian")
        if self.hessian.K.size == 0:
            raise StateError("data-informed spectrum needs the assembled K")
        k = self.hessian.K - self.sigma2 * np.eye(self.hessian.size)
        eigenvalues = scipy.linalg.eigvalsh(k / self.sigma2)[::-1]
        return eigenvalues, int(np.sum(eigenvalues > 1.0))

    def sample_qoi_posterior(self, d_obs: ObsSeries, n_samples: int, seed: int) -> np.ndarray:
        """Draws ``q ~ N(q_map, Gamma_post(q))`` as an ``(n_samples, N_q, N_t)`` array."""
        self._require("qoi")
        if n_samples < 1:
            raise ConfigError(f"n_samples must be >= 1, got {n_samples}")
        q_map, _, _ = self.predict_qoi(d_obs)
        eigenvalues, vectors = scipy.linalg.eigh(self.qoi.qoi_cov)
        root = vectors * np.sqrt(np.clip(eigenvalues, 0.0, None))
        z = np.random.default_rng(seed).standard_normal((n_samples, root.shape[1]))
        draws = q_map.rows().reshape(-1) + z @ root.T
        return draws.reshape(n_samples, self.dims.n_qoi, self.dims.n_time)

    def solve_map_cg(self, d_obs: ObsSeries, tol: float = 1e-8, maxiter: Optional[int] = None
                     ) -> Tuple[SpaceTimeField, int]:
        """Prior-preconditioned CG on the MAP normal equations, using kernel matvecs."""
        self._require("plan_f", "prior")
        n_m, n_t = self.dims.n_space, self.dims.n_time
        n = n_m * n_t

        def as_field(v: np.ndarray) -> SpaceTimeField:
            return SpaceTimeField.from_rows(v.reshape(n_m, n_t))

        def hessian(v: np.ndarray) -> np.ndarray:
            m = as_field(v)
            misfit = apply_adjoint(self.plan_f, apply(self.plan_f, m)).values / self.sigma2
            return misfit + apply_precision(self.prior, m).values

        def precondition(v: np.ndarray) -> np.ndarray:
            return apply_cov(self.prior, as_field(v)).values

        op = scipy.sparse.linalg.LinearOperator((n, n), matvec=hessian, dtype=np.float64)
        pre = scipy.sparse.linalg.LinearOperator((n, n), matvec=precondition, dtype=np.float64)
        rhs = apply_adjoint(self.plan_f, reindex(d_obs, Layout.SPACE_MAJOR_ROWS)).values / self.sigma2
        iterations = 0

        def count(_):
            nonlocal iterations
            iterations += 1

        solution, info = scipy.sparse.linalg.cg(op, rhs, rtol=tol, maxiter=maxiter, M=pre,
                                                callback=count)
        if info > 0:
            logger.warning(f"⚠ CG stopped after {iterations} iterations without reaching rtol={tol}")
        elif info < 0:
            raise NumericalError(f"CG breakdown (info={info})")
        return as_field(solution), iterations


def integrate_displacement(m: SpaceTimeField, dt_obs: float) -> np.ndarray:
    """Left-endpoint Riemann sum ``sum_t m(x, t) dt_obs`` per spatial point."""
    return m.rows().sum(axis=1) * dt_obs
