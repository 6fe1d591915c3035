"""Synthetic seafloor motion and noisy observations for end-to-end runs."""

import logging
from dataclasses import dataclass
from typing import Tuple

import numpy as np

from ..core import ObsSeries, SpaceTimeField
from ..errors import ConfigError

logger = logging.getLogger('ltibayes')


@dataclass(frozen=True)
class BumpParams:
    """Gaussian uplift of height ``amplitude`` rising over ``rise_time`` seconds."""
    center: float
    width: float
    rise_time: float
    amplitude: float = 1.0


def cosine_ramp(t: np.ndarray, rise_time: float) -> np.ndarray:
    """Smooth 0 -> 1 ramp on ``[0, rise_time]``, constant outside."""
    s = np.clip(np.asarray(t, dtype=np.float64) / rise_time, 0.0, 1.0)
    return 0.5 * (1.0 - np.cos(np.pi * s))


def synth_truth(x_nodes: np.ndarray, n_time: int, dt_obs: float, bump: BumpParams) -> SpaceTimeField:
    """Seafloor velocity whose time integral is the Gaussian uplift.

    Block ``j`` carries the ramp increment over ``((j-1) dt, j dt]`` divided by
    ``dt``, so the left Riemann sum over time telescopes to the bump exactly.
    """
    if not bump.rise_time > 0:
        raise ConfigError(f"truth.rise_time must be positive, got {bump.rise_time}")
    if not bump.width > 0:
        raise ConfigError(f"truth.width must be positive, got {bump.width}")
    x = np.asarray(x_nodes, dtype=np.float64)
    shape = bump.amplitude * np.exp(-(x - bump.center) ** 2 / (2.0 * bump.width ** 2))
    t = np.arange(n_time + 1) * dt_obs
    rate = np.diff(cosine_ramp(t, bump.rise_time)) / dt_obs
    if rate.sum() * dt_obs < 1.0 - 1e-12:
        logger.warning(f"rise time {bump.rise_time} s exceeds the observation window "
                       f"{n_time * dt_obs} s; uplift is truncated")
    return SpaceTimeField.from_rows(np.outer(shape, rate))


def add_noise(d: ObsSeries, rel: float, seed: int) -> Tuple[ObsSeries, float]:
    """Add i.i.d. Gaussian noise of standard deviation ``rel * max|d|``.

    Returns the noisy series (same layout as ``d``) and the noise standard
    deviation used for ``Gamma_noise = sigma^2 I``, floored at
    ``1e-12 * max(1, max|d|)`` so the noise covariance stays invertible.
    """
    if rel < 0:
        raise ConfigError(f"noise.rel must be non-negative, got {rel}")
    peak = float(np.max(np.abs(d.values))) if d.values.size else 0.0
    sigma_raw = rel * peak
    z = np.random.default_rng(seed).standard_normal(d.values.size)
    d_obs = d.with_values(d.values + sigma_raw * z)
    sigma = max(sigma_raw, 1e-12 * max(1.0, peak))
    return d_obs, sigma
