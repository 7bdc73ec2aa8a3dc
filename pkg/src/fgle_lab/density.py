"""Gaussian-kernel density estimates and L1 / total-variation distances."""

from dataclasses import dataclass
import csv

import numpy as np
from scipy.integrate import trapezoid

# points of the default evaluation grid and its half-width in pooled stds
GRID_POINTS = 2048
GRID_HALF_WIDTH = 6.0
_CHUNK = 4096


class DegenerateSampleError(ValueError):
    pass


@dataclass(frozen=True)
class DensityEstimate:
    grid_points: np.ndarray
    values: np.ndarray
    bandwidth: float
    sample_count: int

    def integral(self) -> float:
        return float(trapezoid(self.values, self.grid_points))

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["point", "value"])
            for p, v in zip(self.grid_points, self.values):
                w.writerow([repr(float(p)), repr(float(v))])

    @classmethod
    def from_csv(cls, path, bandwidth=float("nan"), sample_count=0) -> "DensityEstimate":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1], bandwidth, sample_count)


def _clean(samples):
    x = np.asarray(samples, dtype=float).ravel()
    x = x[np.isfinite(x)]
    if len(x) < 100:
        raise DegenerateSampleError(f"need at least 100 finite samples, got {len(x)}")
    return x


def silverman_bandwidth(samples) -> float:
    """1.06 min(std, IQR/1.34) M^(-1/5)."""
    x = _clean(samples)
    q75, q25 = np.percentile(x, [75, 25])
    spread = min(np.std(x), (q75 - q25) / 1.34)
    if not spread > 0:
        raise DegenerateSampleError("samples have zero spread")
    return 1.06 * spread * len(x) ** (-0.2)


def default_eval_grid(*sample_sets, n_points: int = GRID_POINTS, half_width: float = GRID_HALF_WIDTH) -> np.ndarray:
    """Uniform grid over pooled mean +- ``half_width`` pooled stds."""
    pooled = np.concatenate([_clean(s) for s in sample_sets])
    mu, sd = pooled.mean(), pooled.std()
    if not sd > 0:
        raise DegenerateSampleError("samples have zero spread")
    return np.linspace(mu - half_width * sd, mu + half_width * sd, n_points)


def kde(samples, bandwidth=None, eval_grid=None) -> DensityEstimate:
    """Gaussian KDE evaluated on ``eval_grid`` (default grid when None).

    ``bandwidth`` None or "auto" selects Silverman's rule.
    """
    x = _clean(samples)
    if bandwidth is None or bandwidth == "auto":
        bandwidth = silverman_bandwidth(x)
    if not bandwidth > 0:
        raise DegenerateSampleError("bandwidth must be positive")
    grid = default_eval_grid(x) if eval_grid is None else np.asarray(eval_grid, dtype=float)
    acc = np.zeros(len(grid))
    for lo in range(0, len(x), _CHUNK):
        u = (grid[:, None] - x[None, lo:lo + _CHUNK]) / bandwidth
        acc += np.exp(-0.5 * u * u).sum(axis=1)
    vals = acc / (len(x) * bandwidth * np.sqrt(2.0 * np.pi))
    return DensityEstimate(grid, vals, float(bandwidth), len(x))


def _same_grid(p: DensityEstimate, q: DensityEstimate):
    if p.grid_points.shape != q.grid_points.shape or not np.array_equal(p.grid_points, q.grid_points):
        raise ValueError("densities are on different evaluation grids")


def l1_distance(p: DensityEstimate, q: DensityEstimate) -> float:
    _same_grid(p, q)
    return float(trapezoid(np.abs(p.values - q.values), p.grid_points))


def tv_distance_samples(a, b, eval_grid=None) -> float:
    """Half the L1 distance between KDEs sharing one bandwidth (the larger
    Silverman bandwidth of the two) and one grid."""
    bw = max(silverman_bandwidth(a), silverman_bandwidth(b))
    grid = default_eval_grid(a, b) if eval_grid is None else eval_grid
    return 0.5 * l1_distance(kde(a, bw, grid), kde(b, bw, grid))


def gaussian_reference(mean: float, variance: float, eval_grid) -> DensityEstimate:
    if not variance > 0:
        raise ValueError("variance must be positive")
    g = np.asarray(eval_grid, dtype=float)
    vals = np.exp(-0.5 * (g - mean) ** 2 / variance) / np.sqrt(2.0 * np.pi * variance)
    return DensityEstimate(g, vals, 0.0, 0)
