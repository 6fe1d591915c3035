#!/usr/bin/env python3
"""
ltibayes CLI

Offline-online Bayesian inversion for a linear time-invariant wave model:
simulate synthetic data, precompute the offline operators once, then infer the
seafloor motion and forecast the sea surface in real time from new data.
"""

import argparse
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, Iterator, Optional

import numpy as np
import pandas as pd
import yaml
from dotenv import load_dotenv

from . import archive
from .bayes_engine import BayesEngine, PosteriorSummary
from .bench import run_bench
from .config import RunConfig
from .core import Provenance
from .errors import ConfigError, LtiBayesError, StateError
from .fft_matvec import plan, worker_count
from .forward_model import create_forward_model, solver_invocations
from .forward_model.synthetic import add_noise, synth_truth
from .logger import close_file_handlers, setup_logger
from .phase_ledger import PhaseLedger
from .prior import build as build_prior, premultiply_kernel
from .verify import run_verification

logger = logging.getLogger('ltibayes')

SIMULATE_SUMMARY = "simulate_summary.yaml"
MANIFEST = "manifest.txt"
KERNEL_FILES = {Provenance.F: "kernel_F.btpz", Provenance.FQ: "kernel_Fq.btpz",
                Provenance.GSTAR: "kernel_Gstar.btpz", Provenance.GQSTAR: "kernel_Gqstar.btpz"}
DENSE_FILES = {"K": "K.dnsm", "chol": "K_chol.dnsm", "Q": "Q.dnsm", "qoi_cov": "qoi_cov.dnsm"}


@contextmanager
def offline_phase(name: str) -> Iterator[None]:
    """Re-raise any failure inside an offline phase with the phase name attached."""
    try:
        yield
    except LtiBayesError as e:
        raise type(e)(f"{name} failed: {e}") from e
    except Exception as e:
        raise LtiBayesError(f"{name} failed: {e}") from e


def noise_sigma(cfg: RunConfig) -> float:
    """Noise std from ``noise.sigma``, else from the simulate summary in the output directory."""
    if cfg.noise.sigma is not None:
        return cfg.noise.sigma
    summary = cfg.out_dir / SIMULATE_SUMMARY
    if not summary.exists():
        raise ConfigError(
            f"noise.sigma is not set and {summary} does not exist; run 'simulate' first")
    with open(summary, 'r', encoding='utf-8') as f:
        return float(yaml.safe_load(f)["sigma"])


def run_config_hash(cfg: RunConfig, sigma: float) -> str:
    return archive.config_hash(cfg.canonical_text() + f"sigma={sigma!r}\n")


def cmd_simulate(cfg: RunConfig, seed: Optional[int] = None) -> Dict[str, float]:
    """Synthetic truth, clean and noisy observations, and the noise level."""
    logger.info("Phase 0: Synthetic Data")
    logger.info("=" * 50)
    if cfg.truth is None:
        raise ConfigError("simulate needs a [truth] section")
    seed = cfg.noise.seed if seed is None else seed
    dims = cfg.dims
    model = create_forward_model(cfg)

    m_true = synth_truth(cfg.x_nodes, dims.n_time, dims.dt_obs, cfg.truth)
    start = time.perf_counter()
    d, q = model.simulate_forward(m_true)
    logger.info(f"Forward simulation ({model.get_model_name()}) took {time.perf_counter() - start:.2f}s")
    d_obs, sigma = add_noise(d, cfg.noise.rel, seed)

    out = cfg.out_dir
    for name, series in (("m_true", m_true), ("d_clean", d), ("q_true", q), ("d_obs", d_obs)):
        archive.write_series(out / f"{name}.f64", series)
    archive.write_frame(out / "d_obs.csv", archive.series_frame(d_obs, "sensor_id", dims.dt_obs))
    archive.write_frame(out / "q_true.csv", archive.series_frame(q, "qoi_id", dims.dt_obs))
    archive.write_frame(out / "m_true.csv", archive.series_frame(m_true, "x_index", dims.dt_obs))

    summary = {"sigma": float(sigma), "rel": float(cfg.noise.rel), "seed": int(seed),
               "max_wave_height": float(np.max(np.abs(q.values))),
               "max_pressure": float(np.max(np.abs(d.values)))}
    archive.atomic_write_text(out / SIMULATE_SUMMARY, yaml.safe_dump(summary, sort_keys=True))
    logger.info(f"✓ Max wave height: {summary['max_wave_height']:.4g} m")
    logger.info(f"✓ Max pressure: {summary['max_pressure']:.4g} Pa")
    logger.info(f"✓ Noise sigma: {sigma:.4g} Pa ({cfg.noise.rel:.2%} relative, seed {seed})")
    return summary


def cmd_offline(cfg: RunConfig, force: bool = False, show_progress: bool = True) -> archive.Manifest:
    """Phases 1-3: kernels, data-space Hessian, data-to-QoI map and QoI covariance."""
    out = cfg.out_dir
    dims = cfg.dims
    sigma = noise_sigma(cfg)
    digest = run_config_hash(cfg, sigma)
    manifest_path = out / MANIFEST
    if manifest_path.exists() and not force:
        existing = archive.Manifest.read(manifest_path)
        if existing.is_current(out, digest):
            logger.info("✓ Offline artifacts match the current config; nothing to do (use --force)")
            return existing

    ledger = PhaseLedger(out)
    model = create_forward_model(cfg)
    logger.info(f"Problem: N_m={dims.n_space}, N_d={dims.n_sensors}, N_q={dims.n_qoi}, "
                f"N_t={dims.n_time}, sigma={sigma:.4g}")

    logger.info("\nPhase 1: Adjoint Kernel Extraction")
    logger.info("=" * 50)
    with offline_phase("Phase 1 (adjoint solves)"):
        kernel_f, kernel_fq, timings = model.extract_kernels(
            dims.n_time, max_workers=worker_count(), show_progress=show_progress)
    for kind, seconds in timings.items():
        ledger.record(kind, len(seconds), float(sum(seconds)), "PDE solves")
    logger.info(f"✓ {dims.n_sensors + dims.n_qoi} adjoint solves completed")

    logger.info("\nPhase 2: Prior Premultiplication and Data-Space Hessian")
    logger.info("=" * 50)
    with offline_phase("Phase 2a (prior premultiplication)"):
        prior = build_prior(dims.n_space, cfg.h_x, cfg.prior_gamma, cfg.prior.delta)
        with ledger.timed("premultiply", dims.n_sensors + dims.n_qoi, "kernel rows"):
            kernel_g = premultiply_kernel(prior, kernel_f)
            kernel_gq = premultiply_kernel(prior, kernel_fq)
    with offline_phase("Phase 2b (form and factorize K)"):
        engine = BayesEngine(dims, sigma, plan(kernel_f), plan(kernel_g), plan(kernel_fq),
                             plan(kernel_gq), prior)
        with ledger.timed("form_K", dims.n_data, "matvec pairs"):
            engine.form_K(show_progress=show_progress)
        with ledger.timed("factorize_K", 1):
            engine.factorize()
    logger.info(f"✓ K is {dims.n_data} x {dims.n_data}, "
                f"assembly asymmetry {engine.hessian.asymmetry:.2e}")

    logger.info("\nPhase 3: Data-to-QoI Map and QoI Posterior Covariance")
    logger.info("=" * 50)
    with offline_phase("Phase 3 (QoI maps)"):
        with ledger.timed("form_Q", dims.n_forecast, "solves"):
            engine.form_qoi_maps(show_progress=show_progress)

    d_path = out / "d_obs.f64"
    if d_path.exists():
        d_obs = archive.read_series(d_path)
        residual = engine.smw_residual(engine.infer_map(d_obs), d_obs)
        mark = "✓" if residual <= 1e-8 else "⚠"
        logger.info(f"{mark} Self-check SMW residual on stored data: {residual:.3e}")

    manifest = archive.Manifest(config_hash=digest)
    writes = [(KERNEL_FILES[k.provenance], archive.write_kernel, k)
              for k in (kernel_f, kernel_fq, kernel_g, kernel_gq)]
    writes += [(DENSE_FILES["K"], archive.write_dense, engine.hessian.K, True),
               (DENSE_FILES["chol"], archive.write_dense, engine.hessian.chol, False),
               (DENSE_FILES["Q"], archive.write_dense, engine.qoi.Q, False),
               (DENSE_FILES["qoi_cov"], archive.write_dense, engine.qoi.qoi_cov, True)]
    for name, writer, *payload in writes:
        nbytes, seconds = archive.timed_write(writer, out / name, *payload)
        manifest.add_artifact(out, name, nbytes, seconds)
    manifest.phases = ledger.as_manifest_entries()
    manifest.write(manifest_path)
    ledger.save()
    logger.info(f"✓ Offline artifacts written to {out} ({ledger.total_seconds():.2f}s of compute)")
    return manifest


def load_online_engine(cfg: RunConfig) -> BayesEngine:
    """Engine over persisted artifacts after checking them against the manifest."""
    out = cfg.out_dir
    sigma = noise_sigma(cfg)
    manifest = archive.Manifest.read(out / MANIFEST)
    manifest.verify(out, run_config_hash(cfg, sigma))
    dims = cfg.dims
    chol, _ = archive.read_dense(out / DENSE_FILES["chol"])
    q_map, _ = archive.read_dense(out / DENSE_FILES["Q"])
    qoi_cov, _ = archive.read_dense(out / DENSE_FILES["qoi_cov"])
    kernel_g = archive.read_kernel(out / KERNEL_FILES[Provenance.GSTAR], Provenance.GSTAR)
    engine = BayesEngine.from_artifacts(dims, sigma, chol, q_map, qoi_cov, plan(kernel_g))
    engine.plan_f = plan(archive.read_kernel(out / KERNEL_FILES[Provenance.F], Provenance.F))
    engine.prior = build_prior(dims.n_space, cfg.h_x, cfg.prior_gamma, cfg.prior.delta)
    return engine


def cmd_infer(cfg: RunConfig, data_path: Optional[Path] = None, probes: int = 0,
              level: float = 0.95, seed: int = 0) -> PosteriorSummary:
    """Phase 4: MAP inference and QoI forecast from the offline artifacts only."""
    logger.info("Phase 4: Online Inference and Forecast")
    logger.info("=" * 50)
    solves_before = solver_invocations()
    start = time.perf_counter()
    engine = load_online_engine(cfg)
    d_obs = archive.read_series(data_path or cfg.out_dir / "d_obs.f64")
    load_seconds = time.perf_counter() - start

    summary = engine.summarize(d_obs, level=level, n_probes=probes, seed=seed)
    residual = engine.smw_residual(summary.m_map, d_obs)
    compute_seconds = sum(summary.timings.values())
    if solver_invocations() != solves_before:
        raise StateError("online inference invoked the wave solver")

    dims = cfg.dims
    out = cfg.out_dir
    archive.write_series(out / "m_map.f64", summary.m_map)
    archive.write_frame(out / "map_displacement.csv",
                        archive.displacement_frame(cfg.x_nodes, summary.displacement,
                                                   summary.pointwise_std))
    archive.write_frame(out / "qoi_forecast.csv",
                        archive.forecast_frame(summary.q_map, summary.ci_lower, summary.ci_upper,
                                               dims.dt_obs))
    latency = pd.DataFrame({"step": ["load"] + list(summary.timings),
                            "wall_seconds": [load_seconds] + list(summary.timings.values())})
    archive.write_frame(out / "infer_latency.csv", latency)

    logger.info(f"✓ SMW residual: {residual:.3e}")
    logger.info(f"✓ Load {load_seconds * 1e3:.1f} ms, compute {compute_seconds * 1e3:.1f} ms "
                f"(infer_map {summary.timings['infer_map'] * 1e3:.2f} ms)")
    logger.info(f"✓ Wave solver invocations during inference: {solver_invocations() - solves_before}")
    return summary


def cmd_bench(cfg: RunConfig, seed: int = 0, show_progress: bool = True) -> Path:
    logger.info("Benchmark: FFT vs dense matvec, direct inference vs CG")
    logger.info("=" * 50)
    frame = run_bench(cfg.bench, seed, show_progress)
    output_file = cfg.out_dir / "bench.csv"
    archive.write_frame(output_file, frame)
    logger.info(f"✓ Benchmark results saved to {output_file} ({len(frame)} rows)")
    return output_file


def cmd_verify(out_dir: Path, seed: int = 0, debug_transpose: bool = False,
               show_progress: bool = True) -> int:
    """Run the oracle suite; returns the process exit code."""
    logger.info("Verification: oracle suite on built-in tiny instances")
    logger.info("=" * 50)
    results = run_verification(seed, debug_transpose, show_progress)
    frame = pd.DataFrame([{"check": r.name, "error": r.error, "tolerance": r.tolerance,
                           "passed": r.passed, "detail": r.detail} for r in results])
    archive.write_frame(Path(out_dir) / "verify_report.csv", frame)
    failed = [r.name for r in results if not r.passed]
    if failed:
        logger.error(f"✗ {len(failed)}/{len(results)} checks failed: {', '.join(failed)}")
        return 1
    logger.info(f"✓ All {len(results)} checks passed")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ltibayes",
        description="Offline-online Bayesian inversion and QoI forecasting for LTI wave models",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Synthetic truth and noisy data
  ltibayes simulate --config configs/desk.yaml --out runs/desk

  # Offline phases (adjoint solves, K, Q, QoI covariance)
  ltibayes offline --config configs/desk.yaml --out runs/desk

  # Real-time inference with 95% credible intervals and pointwise std
  ltibayes infer --config configs/desk.yaml --out runs/desk --probes 200

  # Oracle suite, and its negative control
  ltibayes verify
  ltibayes verify --debug-transpose
        """
    )
    parser.add_argument("command", choices=["simulate", "offline", "infer", "bench", "verify"])
    parser.add_argument("--config", help="Path to the YAML run configuration")
    parser.add_argument("--out", help="Artifact directory (overrides paths.out_dir)")
    parser.add_argument("--seed", type=int, help="Random seed (noise, probes, oracle instances)")
    parser.add_argument("--probes", type=int, default=0,
                        help="Rademacher probes for the pointwise posterior std (infer)")
    parser.add_argument("--level", type=float, default=0.95, help="Credible level in (0, 1)")
    parser.add_argument("--data", help="Observation series (.f64 with .hdr sidecar) for infer")
    parser.add_argument("--force", action="store_true",
                        help="Recompute offline artifacts even when the manifest is current")
    parser.add_argument("--debug-transpose", action="store_true",
                        help="Use an unconjugated FFT adjoint in verify (negative control)")
    parser.add_argument("--debug", action="store_true",
                        help="Enable debug logging and write a debug log file")
    parser.add_argument("--version", "-v", action="version", version="ltibayes v0.1.0")
    return parser


def main(argv=None):
    """Main CLI entry point."""
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command != "verify" and not args.config:
        parser.error(f"'{args.command}' requires --config")
    if not 0 < args.level < 1:
        parser.error("--level must lie in (0, 1)")

    load_dotenv()
    exit_code = 0
    try:
        cfg = RunConfig.from_file(Path(args.config)) if args.config else None
        out_dir = Path(args.out) if args.out else (cfg.out_dir if cfg else Path("output"))
        out_dir.mkdir(parents=True, exist_ok=True)
        if cfg is not None:
            cfg.with_out_dir(out_dir)
        setup_logger(out_dir, args.command, args.debug)

        logger.info("ltibayes")
        logger.info("=" * 50)
        logger.info(f"Output Folder: {out_dir.resolve()}")
        seed = args.seed if args.seed is not None else 0

        if args.command == "simulate":
            cmd_simulate(cfg, args.seed)
        elif args.command == "offline":
            cmd_offline(cfg, force=args.force)
        elif args.command == "infer":
            cmd_infer(cfg, Path(args.data) if args.data else None, args.probes, args.level, seed)
        elif args.command == "bench":
            cmd_bench(cfg, seed)
        else:
            exit_code = cmd_verify(out_dir, seed, args.debug_transpose)

        if exit_code == 0:
            logger.info("\n✓ Completed successfully.")

    except KeyboardInterrupt:
        logger.warning("\n⚠ Operation cancelled by user")
        sys.exit(1)
    except Exception as e:
        logger.critical(f"\n✗ An unexpected error occurred: {str(e)}", exc_info=args.debug)
        sys.exit(1)
    finally:
        close_file_handlers()
    sys.exit(exit_code)


if __name__ == "__main__":
    main()
