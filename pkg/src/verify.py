"""Oracle suite run by ``ltibayes verify`` on built-in tiny instances.

Each check compares a fast path against an independent reference (dense
matrices, explicit recursion, or an inner-product identity) and reports the
measured error next to its tolerance.
"""

import logging
from dataclasses import dataclass
from typing import Callable, List, Tuple

import numpy as np
import scipy.fft
from tqdm import tqdm

from .bayes_engine import BayesEngine
from .core import BlockToeplitzKernel, Dims, ObsSeries, QoISeries, SpaceTimeField, materialize
from .fft_matvec import MatvecPlan, apply, apply_adjoint, dense_apply, plan, worker_count
from .forward_model.acoustic_gravity import AcousticGravityModel, WaveConfig, WaveState
from .forward_model.lti import LtiSystem, lti_impulse_kernel, simulate_lti
from .prior import PriorOp, build as build_prior, premultiply_kernel

logger = logging.getLogger('ltibayes')


@dataclass
class CheckResult:
    name: str
    error: float
    tolerance: float
    passed: bool
    detail: str = ""


def space_major_permutation(n_rows: int, n_time: int) -> np.ndarray:
    """Index map from SpaceMajorRows positions to TimeMajorBlocks positions."""
    return (np.arange(n_time)[None, :] * n_rows + np.arange(n_rows)[:, None]).ravel()


def dense_operator(kernel: BlockToeplitzKernel) -> np.ndarray:
    """Materialized stored map, indexed in SpaceMajorRows order on both sides."""
    out_perm = space_major_permutation(kernel.rows_out, kernel.n_time)
    in_perm = space_major_permutation(kernel.n_cols, kernel.n_time)
    return materialize(kernel)[np.ix_(out_perm, in_perm)]


def dense_prior(prior: PriorOp, n_time: int) -> np.ndarray:
    """``I_{N_t} (x) Gamma_x`` in SpaceMajorRows order."""
    return np.kron(prior.dense_cov(), np.eye(n_time))


def tiny_wave_config() -> WaveConfig:
    return WaveConfig.with_cfl(length=700.0, depth=300.0, h_x=100.0, h_z=100.0, dt_obs=0.2,
                               sensor_x=(200.0, 500.0), qoi_x=(100.0, 600.0))


def _relative(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)


def _adjoint_rows_unconjugated(p: MatvecPlan, rows: np.ndarray) -> np.ndarray:
    """Deliberately wrong adjoint (transpose without conjugation), for negative controls."""
    d_hat = scipy.fft.rfft(rows, n=p.padded_length, axis=-1, workers=worker_count())
    m_hat = np.einsum("rcf,...rf->...cf", p.kernel_hat, d_hat, optimize=True)
    return scipy.fft.irfft(m_hat, n=p.padded_length, axis=-1)[..., :p.n_time]


def check_wave_adjoint(rng: np.random.Generator, pairs: int = 5) -> CheckResult:
    model = AcousticGravityModel(tiny_wave_config())
    n_t = 6
    worst = 0.0
    for _ in range(pairs):
        m = SpaceTimeField.from_rows(rng.standard_normal((model.n_space, n_t)))
        w = ObsSeries.from_rows(rng.standard_normal((model.n_sensors, n_t)))
        d, _ = model.simulate_forward(m)
        back = model.simulate_adjoint(w, None, n_t)
        lhs = float(d.values @ w.values)
        rhs = float(m.values @ back.values)
        worst = max(worst, abs(lhs - rhs) / (np.linalg.norm(d.values) * np.linalg.norm(w.values)))
    return CheckResult("wave adjoint dot-product", worst, 1e-12, worst <= 1e-12)


def check_fft_adjoint(rng: np.random.Generator, debug_transpose: bool) -> CheckResult:
    kernel = BlockToeplitzKernel(rng.standard_normal((3, 4, 16)))
    p = plan(kernel)
    m = rng.standard_normal((4, 16))
    w = rng.standard_normal((3, 16))
    d = apply(p, SpaceTimeField.from_rows(m)).rows()
    if debug_transpose:
        back = _adjoint_rows_unconjugated(p, w)
    else:
        back = apply_adjoint(p, ObsSeries.from_rows(w)).rows()
    error = abs(np.sum(d * w) - np.sum(m * back)) / (np.linalg.norm(d) * np.linalg.norm(w))
    detail = "unconjugated adjoint (negative control)" if debug_transpose else ""
    return CheckResult("fft adjoint dot-product", float(error), 1e-12, error <= 1e-12, detail)


def check_fft_vs_dense(rng: np.random.Generator) -> CheckResult:
    kernel = BlockToeplitzKernel(rng.standard_normal((4, 6, 64)))
    p = plan(kernel)
    m = SpaceTimeField.from_rows(rng.standard_normal((6, 64)))
    w = ObsSeries.from_rows(rng.standard_normal((4, 64)))
    forward = _relative(apply(p, m).values, dense_apply(kernel, m).values)
    backward = _relative(apply_adjoint(p, w).values, dense_apply(kernel, w, adjoint=True).values)
    error = max(forward, backward)
    return CheckResult("fft matvec vs dense", error, 1e-12, error <= 1e-12)


def check_lti_kernel(rng: np.random.Generator) -> CheckResult:
    system = LtiSystem.random(5, 3, 2, 2, seed=int(rng.integers(1 << 31)))
    kernel = lti_impulse_kernel(system, 24)
    m = SpaceTimeField.from_rows(rng.standard_normal((3, 24)))
    d, _ = simulate_lti(system, m)
    error = _relative(apply(plan(kernel), m).values, d.values)
    return CheckResult("lti kernel vs recursion", error, 1e-13, error <= 1e-13)


def check_toeplitz_bridge(rng: np.random.Generator) -> CheckResult:
    model = AcousticGravityModel(tiny_wave_config())
    n_t = 8
    kernel_f, kernel_fq, _ = model.extract_kernels(n_t, show_progress=False)
    m = SpaceTimeField.from_rows(rng.standard_normal((model.n_space, n_t)))
    d, q = model.simulate_forward(m)
    error = max(_relative(apply(plan(kernel_f), m).values, d.values),
                _relative(apply(plan(kernel_fq), m).values, q.values))
    return CheckResult("simulation vs kernel convolution", error, 1e-10, error <= 1e-10)


def _tiny_engine(rng: np.random.Generator) -> Tuple[BayesEngine, LtiSystem, PriorOp, Dims]:
    system = LtiSystem.random(6, 5, 3, 2, seed=int(rng.integers(1 << 31)))
    n_t = 8
    dims = Dims(5, 3, 2, n_t, 1.0)
    prior = build_prior(5, 1.0, gamma=0.5)
    k_f = lti_impulse_kernel(system, n_t, "obs")
    k_fq = lti_impulse_kernel(system, n_t, "qoi")
    engine = BayesEngine(dims, 0.3, plan(k_f), plan(premultiply_kernel(prior, k_f)),
                         plan(k_fq, output_type=QoISeries),
                         plan(premultiply_kernel(prior, k_fq)), prior)
    engine.offline()
    return engine, system, prior, dims


def check_map_normal_equations(rng: np.random.Generator) -> CheckResult:
    engine, system, prior, dims = _tiny_engine(rng)
    f = dense_operator(lti_impulse_kernel(system, dims.n_time))
    gamma = dense_prior(prior, dims.n_time)
    d = rng.standard_normal(dims.n_data)
    s2 = engine.sigma2
    hessian = f.T @ f / s2 + np.linalg.inv(gamma)
    reference = np.linalg.solve(hessian, f.T @ d / s2)
    m_map = engine.infer_map(ObsSeries.from_rows(d.reshape(dims.n_sensors, dims.n_time)))
    error = _relative(m_map.rows().ravel(), reference)
    return CheckResult("MAP vs dense normal equations", error, 1e-8, error <= 1e-8)


def check_smw_identities(rng: np.random.Generator) -> List[CheckResult]:
    engine, system, _, dims = _tiny_engine(rng)
    d = ObsSeries.from_rows(rng.standard_normal((dims.n_sensors, dims.n_time)))
    m_map = engine.infer_map(d)
    residual = engine.smw_residual(m_map, d)
    q_map, _, _ = engine.predict_qoi(d)
    _, q_ref = simulate_lti(system, m_map)
    chain = _relative(q_map.values, q_ref.values)
    return [CheckResult("SMW normal-equation residual", residual, 1e-8, residual <= 1e-8),
            CheckResult("Q d_obs vs F_q m_map", chain, 1e-10, chain <= 1e-10)]


def energy_drift(cfg: WaveConfig, n_steps: int) -> float:
    model = AcousticGravityModel(cfg)
    width = 4 * cfg.h_x
    state = WaveState.pressure_pulse(cfg, cfg.length / 2, cfg.depth / 2, width)
    e0 = model.energy(state)
    e1 = model.energy(model.run_free(state, n_steps))
    return abs(e1 - e0) / e0


def check_energy_convergence() -> CheckResult:
    h = 50.0
    dt = 0.4 * h / 1500.0
    common = dict(length=1500.0, depth=750.0, h_x=h, h_z=h, dt_obs=dt,
                  sensor_x=(750.0,), qoi_x=(750.0,), absorbing=False)
    coarse = energy_drift(WaveConfig(substeps=1, **common), 200)
    fine = energy_drift(WaveConfig(substeps=2, **common), 400)
    ratio = coarse / max(fine, 1e-300)
    return CheckResult("closed-box energy drift ratio (dt vs dt/2)", ratio, 12.0, ratio >= 12.0,
                       f"drift {coarse:.3e} -> {fine:.3e}")


def run_verification(seed: int = 0, debug_transpose: bool = False,
                     show_progress: bool = True) -> List[CheckResult]:
    """Run every oracle check; failures are reported, never raised."""
    rng = np.random.default_rng(seed)
    checks: List[Callable[[], object]] = [
        lambda: check_fft_adjoint(rng, debug_transpose),
        lambda: check_fft_vs_dense(rng),
        lambda: check_lti_kernel(rng),
        lambda: check_wave_adjoint(rng),
        lambda: check_toeplitz_bridge(rng),
        lambda: check_map_normal_equations(rng),
        lambda: check_smw_identities(rng),
        check_energy_convergence,
    ]
    results: List[CheckResult] = []
    for check in tqdm(checks, desc="Oracle checks", disable=not show_progress):
        outcome = check()
        results.extend(outcome if isinstance(outcome, list) else [outcome])
    for r in results:
        mark = "✓" if r.passed else "✗"
        suffix = f" ({r.detail})" if r.detail else ""
        logger.info(f"{mark} {r.name}: error {r.error:.3e}, tolerance {r.tolerance:.1e}{suffix}")
    return results
