"""Sampling the Gaussian vector (G(t_1), ..., G(t_N)).

Two independent constructions:

* exact: Cholesky factor of the covariance from :mod:`hilbert_space`;
* Riemann: cell-averaged kernel applied to fGn increments, used only as a
  cross-check of the exact route.

Coarse levels reuse the fine draws at shared times (:func:`subsample`),
which makes them exactly distributed on the coarse grid.
"""

from dataclasses import dataclass, field
import logging
import math

import numpy as np
from scipy.linalg import cholesky, LinAlgError

from .fractional_noise import NoisePath, fgn_autocovariance
from .hilbert_space import build_g_covariance_matrix
from .em_integrator import subsample
from .rng import standard_normals
from .volterra_kernel import GridSpec, weight_vector

log = logging.getLogger(__name__)

JITTER_LADDER = (0.0, 1e-14, 1e-12, 1e-10)
FACTOR_RTOL = 1e-8

__all__ = [
    "ConvolutionSampler", "build_exact_sampler", "sample_exact", "sample_paths",
    "sample_riemann", "riemann_covariance_matrix", "subsample",
]


class SamplerError(RuntimeError):
    pass


@dataclass(frozen=True)
class ConvolutionSampler:
    grid: GridSpec
    alpha: float
    hurst: float
    sigma: float
    covariance: np.ndarray = field(repr=False)
    chol: np.ndarray = field(repr=False)
    jitter_used: float = 0.0

    @property
    def N(self) -> int:
        return self.grid.N

    def from_normals(self, z) -> np.ndarray:
        """Map standard normals (last axis N) to G draws."""
        return np.asarray(z, dtype=float) @ self.chol.T


def build_exact_sampler(grid: GridSpec, alpha: float, H: float, sigma: float = 1.0) -> ConvolutionSampler:
    cov = build_g_covariance_matrix(grid, alpha, H, sigma)
    scale = float(np.max(np.diag(cov)))
    eye = np.eye(grid.N)
    for jit in JITTER_LADDER:
        try:
            L = cholesky(cov + jit * scale * eye, lower=True)
        except LinAlgError:
            continue
        resid = np.linalg.norm(L @ L.T - cov - jit * scale * eye) / np.linalg.norm(cov)
        if resid <= FACTOR_RTOL:
            if jit:
                log.info("Cholesky needed jitter %.0e x max diagonal", jit)
            L.setflags(write=False)
            return ConvolutionSampler(grid, alpha, H, sigma, cov, L, jit * scale)
    raise SamplerError(f"Cholesky failed for N={grid.N}, alpha={alpha}, H={H} "
                       f"even with jitter {JITTER_LADDER[-1]:.0e}")


def sample_exact(sampler: ConvolutionSampler, rng: np.random.Generator) -> np.ndarray:
    return sampler.from_normals(rng.standard_normal(sampler.N))


def sample_paths(sampler: ConvolutionSampler, seed: int, start: int, stop: int) -> np.ndarray:
    """G draws for paths ``start..stop-1``, each from its own stream."""
    return sampler.from_normals(standard_normals(seed, start, stop, sampler.N))


def riemann_matrix(grid: GridSpec, alpha: float, sigma: float = 1.0) -> np.ndarray:
    """Lower-triangular A with G~(t_n) = sum_j A[n-1, j-1] dW_j."""
    N = grid.N
    lags = weight_vector(N, grid.h, alpha) / grid.h
    n, j = np.tril_indices(N)
    A = np.zeros((N, N))
    A[n, j] = lags[n - j]
    return sigma / math.gamma(alpha) * A


def sample_riemann(grid: GridSpec, alpha: float, sigma: float, noise: NoisePath) -> np.ndarray:
    """Riemann-sum approximation of G from scaled fGn increments."""
    if noise.n_steps != grid.N or not math.isclose(noise.h, grid.h, rel_tol=1e-12):
        raise ValueError("noise path is not on the sampler grid")
    return noise.increments @ riemann_matrix(grid, alpha, sigma).T


def riemann_covariance_matrix(grid: GridSpec, alpha: float, H: float, sigma: float = 1.0) -> np.ndarray:
    """Exact covariance of the Riemann-sum vector (no sampling error)."""
    A = riemann_matrix(grid, alpha, sigma)
    k = np.arange(grid.N)
    gam = grid.h ** (2 * H) * fgn_autocovariance(k[:, None] - k[None, :], H)
    return A @ gam @ A.T
