"""Generic discrete LTI backend ``x_k = A x_{k-1} + B m_k``, ``d_k = C x_k``.

Used for the dense-oracle tests on tiny instances and as a drop-in
:class:`ForwardModel` when a propagator is already available as matrices.
"""

import logging
from dataclasses import dataclass
from typing import Dict, Optional, Tuple

import numpy as np

from ..core import BlockToeplitzKernel, ObsSeries, Provenance, QoISeries, SpaceTimeField
from ..errors import DimensionError
from .interface import SOLVE_COUNTER, ForwardModel

logger = logging.getLogger('ltibayes')


@dataclass(frozen=True)
class LtiSystem:
    """State matrices of one observation interval."""
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    C_q: np.ndarray

    def __post_init__(self):
        n = self.A.shape[0]
        if self.A.shape != (n, n):
            raise DimensionError(f"A must be square, got {self.A.shape}")
        if self.B.shape[0] != n or self.C.shape[1] != n or self.C_q.shape[1] != n:
            raise DimensionError(
                f"inconsistent system: A {self.A.shape}, B {self.B.shape}, "
                f"C {self.C.shape}, C_q {self.C_q.shape}")

    @property
    def n_state(self) -> int:
        return self.A.shape[0]

    @property
    def n_input(self) -> int:
        return self.B.shape[1]

    @classmethod
    def random(cls, n_state: int, n_input: int, n_output: int, n_qoi: int,
               seed: int = 0, spectral_radius: float = 0.9) -> "LtiSystem":
        """Stable random system, for tests."""
        rng = np.random.default_rng(seed)
        a = rng.standard_normal((n_state, n_state))
        a *= spectral_radius / max(np.max(np.abs(np.linalg.eigvals(a))), 1e-300)
        return cls(a, rng.standard_normal((n_state, n_input)),
                   rng.standard_normal((n_output, n_state)),
                   rng.standard_normal((n_qoi, n_state)))


def lti_impulse_kernel(system: LtiSystem, n_time: int, output: str = "obs") -> BlockToeplitzKernel:
    """Markov parameters ``C A^{k-1} B``, ``k = 1..n_time``, as a kernel."""
    c = system.C if output == "obs" else system.C_q
    provenance = Provenance.F if output == "obs" else Provenance.FQ
    data = np.empty((c.shape[0], system.n_input, n_time))
    response = system.B.copy()
    for k in range(n_time):
        data[:, :, k] = c @ response
        response = system.A @ response
    return BlockToeplitzKernel(data, provenance)


def simulate_lti(system: LtiSystem, m: SpaceTimeField) -> Tuple[ObsSeries, QoISeries]:
    """Time-step the recursion from ``x_0 = 0``."""
    if m.n_rows != system.n_input:
        raise DimensionError(f"input has {m.n_rows} rows, system has {system.n_input} inputs")
    blocks = m.blocks()
    x = np.zeros(system.n_state)
    d = np.empty((m.n_time, system.C.shape[0]))
    q = np.empty((m.n_time, system.C_q.shape[0]))
    for i in range(m.n_time):
        x = system.A @ x + system.B @ blocks[i]
        d[i] = system.C @ x
        q[i] = system.C_q @ x
    return ObsSeries.from_rows(d.T), QoISeries.from_rows(q.T)


class LtiModel(ForwardModel):
    """:class:`ForwardModel` over explicit LTI matrices."""

    def __init__(self, system: LtiSystem, name: str = "lti"):
        self.system = system
        self._name = name

    @property
    def n_space(self) -> int:
        return self.system.n_input

    @property
    def n_sensors(self) -> int:
        return self.system.C.shape[0]

    @property
    def n_qoi(self) -> int:
        return self.system.C_q.shape[0]

    def get_model_name(self) -> str:
        return self._name

    def get_configuration(self) -> Dict[str, object]:
        return {"n_state": self.system.n_state}

    def simulate_forward(self, m: SpaceTimeField) -> Tuple[ObsSeries, QoISeries]:
        SOLVE_COUNTER.increment()
        return simulate_lti(self.system, m)

    def simulate_adjoint(self, w_obs: Optional[ObsSeries], w_qoi: Optional[QoISeries],
                         n_time: int) -> SpaceTimeField:
        SOLVE_COUNTER.increment()
        s = self.system
        wd = None if w_obs is None else w_obs.blocks()
        wq = None if w_qoi is None else w_qoi.blocks()
        lam = np.zeros(s.n_state)
        out = np.empty((n_time, s.n_input))
        for i in reversed(range(n_time)):
            if i < n_time - 1:
                lam = s.A.T @ lam
            if wd is not None:
                lam = lam + s.C.T @ wd[i]
            if wq is not None:
                lam = lam + s.C_q.T @ wq[i]
            out[i] = s.B.T @ lam
        return SpaceTimeField.from_rows(out.T)
