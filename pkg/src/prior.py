"""Gaussian prior with a Matern-style spatial covariance per time block.

The spatial covariance is the squared inverse of the elliptic operator
``A_x = delta I - gamma L`` on the seafloor line, ``L`` being the 1D Neumann
finite-difference Laplacian. ``Gamma_prior = I_{N_t} (x) A_x^{-2}``: block
diagonal in time with identical blocks, and the prior mean is zero.
"""

import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.sparse

from .core import BlockToeplitzKernel, Provenance, SpaceTimeField
from .errors import ConfigError, DimensionError

logger = logging.getLogger('ltibayes')


def neumann_laplacian(n_space: int, h_x: float) -> scipy.sparse.csr_matrix:
    """Symmetric 1D finite-difference Laplacian with homogeneous Neumann ends."""
    main = np.full(n_space, -2.0)
    if n_space > 1:
        main[0] = main[-1] = -1.0
    else:
        main[0] = 0.0
    off = np.ones(max(n_space - 1, 0))
    return scipy.sparse.diags([off, main, off], [-1, 0, 1], format="csr") / h_x ** 2


@dataclass(frozen=True)
class PriorOp:
    """Factorized prior; immutable after :func:`build`."""
    n_space: int
    h_x: float
    gamma: float
    delta: float
    operator: scipy.sparse.csr_matrix    # A_x
    chol_banded: np.ndarray              # lower banded Cholesky factor of A_x

    def _solve(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve_banded((self.chol_banded, True), rhs)

    def solve_operator(self, blocks: np.ndarray) -> np.ndarray:
        """``A_x^{-1}`` applied to the columns of an ``(N_m, k)`` array."""
        return self._solve(blocks)

    def cov_blocks(self, columns: np.ndarray) -> np.ndarray:
        """``A_x^{-2}`` applied to the columns of an ``(N_m, k)`` array."""
        return self._solve(self._solve(columns))

    def precision_blocks(self, columns: np.ndarray) -> np.ndarray:
        return self.operator @ (self.operator @ columns)

    def dense_cov(self) -> np.ndarray:
        """Dense ``Gamma_x`` (tiny instances and oracles only)."""
        return self.cov_blocks(np.eye(self.n_space))

    def marginal_std(self) -> np.ndarray:
        """Pointwise prior standard deviation of one time block."""
        return np.sqrt(np.diag(self.dense_cov()))

    def correlation(self) -> np.ndarray:
        """Dense ``Gamma_ij / sqrt(Gamma_ii Gamma_jj)``.

        Each row decreases monotonically away from the diagonal. The unnormalized
        rows do not near the Neumann ends, where the marginal variance grows.
        """
        std = self.marginal_std()
        return self.dense_cov() / np.outer(std, std)


def default_gamma(h_x: float) -> float:
    """Diffusion weight giving a correlation length of a few grid cells."""
    return (4.0 * h_x) ** 2


def build(n_space: int, h_x: float, gamma: Optional[float] = None, delta: float = 1.0) -> PriorOp:
    """Assemble ``A_x`` and factorize it once."""
    if gamma is None:
        gamma = default_gamma(h_x)
    if not delta > 0:
        raise ConfigError(f"prior.delta must be positive, got {delta}")
    if gamma < 0:
        raise ConfigError(f"prior.gamma must be non-negative, got {gamma}")
    if not h_x > 0:
        raise ConfigError(f"prior h_x must be positive, got {h_x}")

    operator = (delta * scipy.sparse.identity(n_space, format="csr")
                - gamma * neumann_laplacian(n_space, h_x)).tocsr()
    banded = np.zeros((2, n_space))
    banded[0] = operator.diagonal()
    if n_space > 1:
        banded[1, :-1] = operator.diagonal(-1)
    chol = scipy.linalg.cholesky_banded(banded, lower=True)
    logger.debug(f"Prior factorized: N_m={n_space}, gamma={gamma:.4g}, delta={delta:.4g}")
    return PriorOp(n_space=n_space, h_x=h_x, gamma=gamma, delta=delta,
                   operator=operator, chol_banded=chol)


def _time_blocks(prior: PriorOp, v: SpaceTimeField) -> np.ndarray:
    if v.n_rows != prior.n_space:
        raise DimensionError(f"field has {v.n_rows} spatial rows, prior has {prior.n_space}")
    return v.rows()


def apply_cov(prior: PriorOp, v: SpaceTimeField) -> SpaceTimeField:
    """``Gamma_prior v``, two banded triangular-solve passes per solve, all blocks at once."""
    out = prior.cov_blocks(np.ascontiguousarray(_time_blocks(prior, v)))
    return _like(v, out)


def apply_precision(prior: PriorOp, v: SpaceTimeField) -> SpaceTimeField:
    """``Gamma_prior^{-1} v = A_x^2`` blockwise."""
    out = prior.precision_blocks(np.ascontiguousarray(_time_blocks(prior, v)))
    return _like(v, out)


def sample(prior: PriorOp, n_time: int, seed: int) -> SpaceTimeField:
    """One prior draw ``A_x^{-1} z`` per time block, ``z`` i.i.d. standard normal."""
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((prior.n_space, n_time))
    return SpaceTimeField.from_rows(prior.solve_operator(z))


def premultiply_kernel(prior: PriorOp, kernel_f: BlockToeplitzKernel) -> BlockToeplitzKernel:
    """Kernel of ``G* = Gamma_prior F*`` from the kernel of ``F`` (or ``F_q``).

    ``Gamma_x`` is applied along the spatial axis of every lag slice, one solve
    batch per output row. The result stores ``G = F Gamma_prior``, again block
    lower-triangular Toeplitz, tagged with adjoint direction.
    """
    if kernel_f.n_cols != prior.n_space:
        raise DimensionError(
            f"kernel has {kernel_f.n_cols} columns, prior has {prior.n_space} spatial points")
    provenance = {Provenance.F: Provenance.GSTAR, Provenance.FQ: Provenance.GQSTAR}.get(
        kernel_f.provenance)
    if provenance is None:
        raise DimensionError(f"cannot premultiply a {kernel_f.provenance.label} kernel")
    out = np.empty_like(kernel_f.data)
    for s in range(kernel_f.rows_out):
        out[s] = prior.cov_blocks(kernel_f.data[s])
    return BlockToeplitzKernel(out, provenance)


def _like(v: SpaceTimeField, rows: np.ndarray) -> SpaceTimeField:
    field = SpaceTimeField.from_rows(rows)
    if v.layout is field.layout:
        return field
    return SpaceTimeField.from_blocks(rows.T)
