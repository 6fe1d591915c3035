"""Benchmark harness: FFT vs dense matvecs, and direct online inference vs CG."""

import logging
import math
import time
from typing import Callable, Dict, List

import numpy as np
import pandas as pd
from tqdm import tqdm

from .bayes_engine import BayesEngine
from .config import BenchSettings
from .core import BlockToeplitzKernel, Dims, ObsSeries, QoISeries, SpaceTimeField
from .fft_matvec import apply, dense_apply, plan
from .forward_model.lti import LtiSystem, lti_impulse_kernel
from .prior import build as build_prior, premultiply_kernel

logger = logging.getLogger('ltibayes')

BENCH_COLUMNS = ["op", "N_d", "N_m", "N_t", "wall_seconds", "gflops_est"]
DENSE_CHUNK_BYTES = 256 * 1024 ** 2


def best_time(fn: Callable[[], object], repeats: int) -> float:
    best = math.inf
    for _ in range(max(1, repeats)):
        start = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - start)
    return best


def fft_flops(n_d: int, n_m: int, n_t: int) -> float:
    """Real-FFT transforms of all rows plus the per-frequency complex block products."""
    n = 2 * n_t
    transforms = (n_m + n_d) * 2.5 * n * math.log2(n)
    return transforms + 8.0 * n_d * n_m * (n_t + 1)


def dense_flops(n_d: int, n_m: int, n_t: int) -> float:
    return 2.0 * n_d * n_m * n_t * n_t


def _row(op: str, n_d: int, n_m: int, n_t: int, seconds: float, flops: float) -> Dict[str, object]:
    return {"op": op, "N_d": n_d, "N_m": n_m, "N_t": n_t, "wall_seconds": seconds,
            "gflops_est": flops / seconds / 1e9 if seconds > 0 else float("nan")}


def matvec_sweep(settings: BenchSettings, seed: int = 0, show_progress: bool = True
                 ) -> List[Dict[str, object]]:
    """Time ``apply`` against ``dense_apply`` for every ``N_t`` in the sweep."""
    rng = np.random.default_rng(seed)
    n_d, n_m = settings.n_sensors, settings.n_space
    rows = []
    for n_t in tqdm(settings.n_time_sweep, desc="Matvec sweep", disable=not show_progress):
        kernel = BlockToeplitzKernel(rng.standard_normal((n_d, n_m, n_t)))
        m = SpaceTimeField.from_rows(rng.standard_normal((n_m, n_t)))
        p = plan(kernel)
        fft_seconds = best_time(lambda: apply(p, m), settings.repeats)
        rows.append(_row("fft_apply", n_d, n_m, n_t, fft_seconds, fft_flops(n_d, n_m, n_t)))
        if n_t <= settings.dense_max_n_time:
            dense_seconds = best_time(lambda: dense_apply(kernel, m, max_bytes=DENSE_CHUNK_BYTES), 1)
            rows.append(_row("dense_apply", n_d, n_m, n_t, dense_seconds,
                             dense_flops(n_d, n_m, n_t)))
            logger.info(f"  N_t={n_t}: fft {fft_seconds * 1e3:.3f} ms, dense "
                        f"{dense_seconds * 1e3:.3f} ms, speedup {dense_seconds / fft_seconds:.1f}x")
    return rows


def inference_comparison(settings: BenchSettings, seed: int = 0) -> List[Dict[str, object]]:
    """Online direct inference against prior-preconditioned CG on the same problem."""
    n_d, n_m, n_t = settings.n_sensors, settings.n_space, settings.infer_n_time
    system = LtiSystem.random(2 * n_m, n_m, n_d, 1, seed=seed)
    prior = build_prior(n_m, 1.0)
    k_f = lti_impulse_kernel(system, n_t, "obs")
    k_fq = lti_impulse_kernel(system, n_t, "qoi")
    engine = BayesEngine(Dims(n_m, n_d, 1, n_t, 1.0), 0.05, plan(k_f),
                         plan(premultiply_kernel(prior, k_f)), plan(k_fq, QoISeries),
                         plan(premultiply_kernel(prior, k_fq)), prior)
    start = time.perf_counter()
    engine.form_K()
    engine.factorize()
    logger.info(f"  K ({n_d * n_t} x {n_d * n_t}) assembled and factorized in "
                f"{time.perf_counter() - start:.2f}s")

    rng = np.random.default_rng(seed + 1)
    d = apply(engine.plan_f, SpaceTimeField.from_rows(rng.standard_normal((n_m, n_t))))
    d_obs = ObsSeries.from_rows(d.rows() + 0.05 * rng.standard_normal((n_d, n_t)))

    direct = best_time(lambda: engine.infer_map(d_obs), settings.repeats)
    cg_start = time.perf_counter()
    _, iterations = engine.solve_map_cg(d_obs, tol=settings.cg_tol, maxiter=settings.cg_maxiter)
    cg_seconds = time.perf_counter() - cg_start
    _, rank = engine.data_informed_spectrum()
    logger.info(f"  infer_map {direct * 1e3:.3f} ms vs CG {cg_seconds:.3f}s "
                f"({iterations} iterations, data-informed rank {rank}); "
                f"speedup {cg_seconds / direct:.0f}x")

    n = n_d * n_t
    solve_flops = 2.0 * n * n + fft_flops(n_d, n_m, n_t)
    cg_flops = iterations * 2 * fft_flops(n_d, n_m, n_t)
    return [_row("infer_map", n_d, n_m, n_t, direct, solve_flops),
            _row("solve_map_cg", n_d, n_m, n_t, cg_seconds, cg_flops)]


def speedups(frame: pd.DataFrame) -> Dict[str, float]:
    """Wall-time ratios: dense over FFT at the largest ``N_t`` with both, CG over direct."""
    seconds = frame.set_index(["op", "N_t"])["wall_seconds"]
    ratios = {}
    dense = frame.loc[frame["op"] == "dense_apply", "N_t"]
    if not dense.empty:
        n_t = int(dense.max())
        ratios["fft_vs_dense"] = float(seconds[("dense_apply", n_t)] / seconds[("fft_apply", n_t)])
    direct = frame.loc[frame["op"] == "infer_map", "N_t"]
    if not direct.empty:
        n_t = int(direct.max())
        ratios["direct_vs_cg"] = float(seconds[("solve_map_cg", n_t)] / seconds[("infer_map", n_t)])
    return ratios


def run_bench(settings: BenchSettings, seed: int = 0, show_progress: bool = True) -> pd.DataFrame:
    rows = matvec_sweep(settings, seed, show_progress)
    rows += inference_comparison(settings, seed)
    frame = pd.DataFrame(rows, columns=BENCH_COLUMNS)
    for name, ratio in speedups(frame).items():
        logger.info(f"✓ Speedup {name}: {ratio:.1f}x")
    return frame
