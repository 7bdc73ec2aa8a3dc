"""Exact fractional Gaussian noise and fractional Brownian motion on
uniform grids.

The default sampler is circulant embedding (Davies-Harte): the unit-step
autocovariance sequence is embedded in a circulant matrix of size 2n whose
eigenvalues come from one FFT. If the embedding is not nonnegative definite
the sampler falls back to a dense Cholesky factor of the Toeplitz matrix.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
from scipy.linalg import cholesky, toeplitz

log = logging.getLogger(__name__)

# negative circulant eigenvalues above -EIG_RTOL * max are clipped to zero
EIG_RTOL = 1e-10


def _check_hurst(H):
    if not 0.5 <= H < 1.0:
        raise ValueError(f"Hurst index must lie in [1/2, 1), got {H}")


def fgn_autocovariance(k, H):
    """Autocovariance of unit-step fractional Gaussian noise at lag ``k``.

    ``gamma(k) = (|k+1|^{2H} - 2|k|^{2H} + |k-1|^{2H}) / 2``; vectorized
    over ``k``.
    """
    k = np.abs(np.asarray(k, dtype=float))
    two_h = 2.0 * H
    return 0.5 * (np.abs(k + 1) ** two_h - 2.0 * k ** two_h + np.abs(k - 1) ** two_h)


@dataclass(frozen=True)
class NoisePath:
    """fGn increments and the fBm levels they integrate to."""

    h: float
    hurst: float
    increments: np.ndarray
    levels: np.ndarray

    @property
    def n_steps(self) -> int:
        return self.increments.shape[-1]

    def __post_init__(self):
        if self.levels.shape[-1] != self.increments.shape[-1] + 1:
            raise ValueError("levels must have one more entry than increments")


@dataclass
class FGNSampler:
    """Reusable exact sampler for ``n`` unit-step fGn values.

    Build once, then call :meth:`sample` with a per-path generator; the
    sampler holds no mutable state after construction.
    """

    n: int
    hurst: float
    method: str = "circulant"
    sqrt_eig: np.ndarray | None = field(default=None, repr=False)
    chol: np.ndarray | None = field(default=None, repr=False)
    diagnostics: list = field(default_factory=list)

    @classmethod
    def build(cls, n: int, H: float) -> "FGNSampler":
        if n < 1:
            raise ValueError("n must be positive")
        _check_hurst(H)
        self = cls(n=n, hurst=H)
        if n == 1:
            self.method = "direct"
            return self
        eig = circulant_eigenvalues(n, H)
        tol = EIG_RTOL * eig.max()
        if eig.min() < -tol:
            self.method = "cholesky"
            self.diagnostics.append(
                f"circulant embedding not PSD (min eigenvalue {eig.min():.3e}); "
                "using dense Cholesky")
            log.warning(self.diagnostics[-1])
            cov = toeplitz(fgn_autocovariance(np.arange(n), H))
            self.chol = cholesky(cov, lower=True)
        else:
            self.sqrt_eig = np.sqrt(np.clip(eig, 0.0, None))
        return self

    @property
    def n_normals(self) -> int:
        """Number of standard normals consumed per draw."""
        if self.method == "circulant":
            return 4 * self.n
        return self.n

    def from_normals(self, z: np.ndarray) -> np.ndarray:
        """Map standard normals (last axis ``n_normals``) to fGn samples."""
        z = np.asarray(z, dtype=float)
        if self.method == "direct":
            return z.copy()
        if self.method == "cholesky":
            return z @ self.chol.T
        m = 2 * self.n
        w = z[..., :m] + 1j * z[..., m:]
        y = np.fft.fft(self.sqrt_eig * w, axis=-1) / np.sqrt(m)
        return y.real[..., :self.n]

    def sample(self, rng: np.random.Generator, size=None) -> np.ndarray:
        shape = (self.n_normals,) if size is None else (size, self.n_normals)
        return self.from_normals(rng.standard_normal(shape))


def circulant_eigenvalues(n: int, H: float) -> np.ndarray:
    """Eigenvalues of the size-2n circulant embedding of the fGn covariance."""
    gam = fgn_autocovariance(np.arange(n + 1), H)
    row = np.concatenate([gam, gam[-2:0:-1]])
    return np.fft.fft(row).real


def sample_fgn(n: int, H: float, rng: np.random.Generator) -> np.ndarray:
    """One exact draw of ``n`` unit-step fGn values (scale by ``h**H``)."""
    return FGNSampler.build(n, H).sample(rng)


def fgn_to_fbm(increments, h: float, H: float, scale: bool = False) -> NoisePath:
    """Cumulate increments into fBm levels starting from 0.

    With ``scale=True`` the increments are taken as unit-step draws and
    multiplied by ``h**H`` first.
    """
    inc = np.array(increments, dtype=float)
    if scale:
        inc = inc * h ** H
    levels = np.zeros(inc.shape[:-1] + (inc.shape[-1] + 1,))
    np.cumsum(inc, axis=-1, out=levels[..., 1:])
    return NoisePath(h=h, hurst=H, increments=inc, levels=levels)


def aggregate_to_coarse(fine: NoisePath, ratio: int) -> NoisePath:
    """Coarse-grid noise path built from the same fine draws."""
    if ratio < 1 or fine.n_steps % ratio:
        raise ValueError(f"ratio {ratio} does not divide {fine.n_steps}")
    n_coarse = fine.n_steps // ratio
    inc = fine.increments.reshape(fine.increments.shape[:-1] + (n_coarse, ratio)).sum(-1)
    levels = fine.levels[..., ::ratio].copy()
    return NoisePath(h=fine.h * ratio, hurst=fine.hurst, increments=inc, levels=levels)


def dump_increments(path, increments) -> None:
    """Write increments as little-endian float64, row-major."""
    np.ascontiguousarray(increments, dtype="<f8").tofile(path)


def load_increments(path, n_steps: int) -> np.ndarray:
    data = np.fromfile(path, dtype="<f8")
    return data.reshape(-1, n_steps)
