"""Weights of the weakly singular kernel (t-s)^(alpha-1)/Gamma(alpha) on a
uniform grid.

On a uniform grid the cell integral

    w[n][j] = int_{t_{j-1}}^{t_j} (t_n - s)^(alpha-1) ds
            = h^alpha ((n-j+1)^alpha - (n-j)^alpha) / alpha

depends only on ``n - j``, so one vector of length N carries the whole
lower-triangular matrix.
"""

from dataclasses import dataclass
from functools import cached_property
import math

import numpy as np


@dataclass(frozen=True)
class GridSpec:
    T: float
    N: int

    def __post_init__(self):
        if self.N < 1:
            raise ValueError("N must be at least 1")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def h(self) -> float:
        return self.T / self.N

    @cached_property
    def times(self) -> np.ndarray:
        t = np.arange(self.N + 1) * self.h
        t[-1] = self.T
        return t

    def coarsen(self, ratio: int) -> "GridSpec":
        if ratio < 1 or self.N % ratio:
            raise ValueError(f"ratio {ratio} does not divide N={self.N}")
        return GridSpec(self.T, self.N // ratio)


def _check_alpha(alpha):
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"alpha must lie in (0, 1], got {alpha}")


def em_weight(n: int, j: int, h: float, alpha: float) -> float:
    """``int_{t_{j-1}}^{t_j} (t_n - s)^(alpha-1) ds`` for ``1 <= j <= n``."""
    _check_alpha(alpha)
    if not 1 <= j <= n:
        raise ValueError(f"need 1 <= j <= n, got j={j}, n={n}")
    m = n - j
    return h ** alpha * ((m + 1) ** alpha - m ** alpha) / alpha


def weight_vector(N: int, h: float, alpha: float) -> np.ndarray:
    """``omega[m] = w[n][n-m]`` for lags ``m = 0..N-1``."""
    _check_alpha(alpha)
    m = np.arange(N, dtype=float)
    return h ** alpha * ((m + 1) ** alpha - m ** alpha) / alpha


class WeightMatrix:
    """Lower-triangular EM weights with matrix indexing ``w[n, j]``.

    Storage is the O(N) lag vector; :meth:`dense` materializes the
    (N+1) x (N+1) array with row/column 0 unused.
    """

    def __init__(self, grid: GridSpec, alpha: float):
        self.grid = grid
        self.alpha = alpha
        self.lags = weight_vector(grid.N, grid.h, alpha)

    def __getitem__(self, idx):
        n, j = idx
        if not 1 <= j <= n <= self.grid.N:
            raise IndexError(f"weight ({n}, {j}) outside 1 <= j <= n <= N")
        return self.lags[n - j]

    def row(self, n: int) -> np.ndarray:
        """Weights ``w[n][1..n]`` as an array indexed by ``j-1``."""
        return self.lags[:n][::-1]

    def dense(self) -> np.ndarray:
        N = self.grid.N
        out = np.zeros((N + 1, N + 1))
        n, j = np.tril_indices(N)
        out[n + 1, j + 1] = self.lags[n - j]
        return out

    def row_sums(self) -> np.ndarray:
        return np.cumsum(self.lags)


def build_weight_matrix(grid: GridSpec, alpha: float) -> WeightMatrix:
    return WeightMatrix(grid, alpha)


def kernel_value(t, s, alpha: float):
    """Kernel ``(t-s)^(alpha-1) / Gamma(alpha)``, defined for ``s < t``."""
    _check_alpha(alpha)
    d = np.asarray(t, dtype=float) - np.asarray(s, dtype=float)
    if np.any(d <= 0):
        raise ValueError("kernel_value needs s < t")
    out = d ** (alpha - 1.0) / math.gamma(alpha)
    return float(out) if out.ndim == 0 else out
