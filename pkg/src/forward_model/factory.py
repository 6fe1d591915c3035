"""Forward model factory."""

import logging
from typing import TYPE_CHECKING, Optional

from ..errors import ConfigError
from .interface import ForwardModel

if TYPE_CHECKING:
    from ..config import RunConfig

logger = logging.getLogger('ltibayes')

SUPPORTED_BACKENDS = ("acoustic_gravity", "lti")


def create_forward_model(run_config: "RunConfig", backend: Optional[str] = None) -> ForwardModel:
    """Create the forward model selected by ``run_config.backend``.

    Args:
        run_config: Loaded run configuration
        backend: Optional override of the configured backend name

    Returns:
        A ready-to-use :class:`ForwardModel`

    Raises:
        ConfigError: If the backend name is unknown or its section is missing
    """
    backend = backend or run_config.backend

    if backend == "acoustic_gravity":
        from .acoustic_gravity import model_for
        logger.debug(f"Creating acoustic-gravity model: nx={run_config.wave.nx}, "
                     f"nz={run_config.wave.nz}, substeps={run_config.wave.substeps}")
        return model_for(run_config.wave)
    elif backend == "lti":
        from .lti import LtiModel, LtiSystem
        lti = run_config.lti
        if lti is None:
            raise ConfigError("backend 'lti' needs an [lti] section")
        logger.debug(f"Creating random LTI model: n_state={lti.n_state}, seed={lti.seed}")
        system = LtiSystem.random(lti.n_state, lti.n_space, lti.n_sensors, lti.n_qoi,
                                  seed=lti.seed, spectral_radius=lti.spectral_radius)
        return LtiModel(system)
    else:
        raise ConfigError(
            f"unknown forward model backend '{backend}'; expected one of {SUPPORTED_BACKENDS}")
