"""Euler-Maruyama scheme for the singular-kernel Volterra equation.

    x_n = x0 + 1/Gamma(alpha) sum_{j=1}^n f(x_{j-1}) w[n][j] + G(t_n)

Paths are stored row-wise (path-major). The history sum is recomputed at
every step against the lag-weight vector; this is O(N^2) per path and
matches the scheme term for term.
"""

from dataclasses import dataclass, field
import logging
import math
from typing import Callable

import numpy as np

from .volterra_kernel import GridSpec, weight_vector

log = logging.getLogger(__name__)

# a run fails when more than this fraction of paths blow up
MAX_INVALID_FRACTION = 1e-3


class InvalidPathsError(RuntimeError):
    pass


@dataclass(frozen=True)
class Drift:
    """A drift f with its first two derivatives and a bound on sup|f|.

    ``sup_abs`` is None when f is unbounded (not allowed for the rate
    studies, accepted for deterministic tests).
    """

    name: str
    f: Callable[[np.ndarray], np.ndarray]
    df: Callable[[np.ndarray], np.ndarray]
    d2f: Callable[[np.ndarray], np.ndarray]
    sup_abs: float | None = None
    params: dict = field(default_factory=dict)


def _const(c):
    return lambda x: np.full_like(np.asarray(x, dtype=float), c)


def zero_drift() -> Drift:
    """f = 0; the scheme is then exact."""
    return Drift("zero", _const(0.0), _const(0.0), _const(0.0), 0.0)


def const_drift(c: float = 1.0) -> Drift:
    """f = c."""
    return Drift("const", _const(c), _const(0.0), _const(0.0), abs(c), {"c": c})


def cos_drift(lam: float = 1.0) -> Drift:
    """f = lam cos(x)."""
    return Drift("cos", lambda x: lam * np.cos(x), lambda x: -lam * np.sin(x),
                 lambda x: -lam * np.cos(x), abs(lam), {"lam": lam})


def sin_drift(lam: float = 1.0) -> Drift:
    """f = lam sin(x)."""
    return Drift("sin", lambda x: lam * np.sin(x), lambda x: lam * np.cos(x),
                 lambda x: -lam * np.sin(x), abs(lam), {"lam": lam})


def tanh_drift(lam: float = 1.0) -> Drift:
    """Damped logistic-type drift ``-lam * tanh(x)``."""
    def df(x):
        return -lam / np.cosh(x) ** 2

    def d2f(x):
        return 2.0 * lam * np.tanh(x) / np.cosh(x) ** 2

    return Drift("tanh", lambda x: -lam * np.tanh(x), df, d2f, abs(lam), {"lam": lam})


def linear_drift(k: float = 1.0) -> Drift:
    """Unbounded ``f(x) = k x``; for deterministic checks only."""
    return Drift("linear", lambda x: k * np.asarray(x, dtype=float), _const(k),
                 _const(0.0), None, {"k": k})


PRESETS = {
    "zero": zero_drift,
    "const": const_drift,
    "cos": cos_drift,
    "sin": sin_drift,
    "tanh": tanh_drift,
}


def drift_preset(name: str, **params) -> Drift:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown drift preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**params)


@dataclass(frozen=True)
class ModelParams:
    alpha: float
    hurst: float
    sigma: float
    x0: float
    T: float
    drift: Drift
    deterministic: bool = False

    def __post_init__(self):
        if not 0.5 <= self.hurst < 1:
            raise ValueError(f"hurst must lie in [1/2, 1), got {self.hurst}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.alpha + self.hurst <= 1:
            raise ValueError("need alpha + H > 1")
        if self.sigma == 0 and not self.deterministic:
            raise ValueError("sigma = 0 is only allowed in deterministic mode")
        if not self.T > 0:
            raise ValueError("T must be positive")

    @property
    def gamma_alpha(self) -> float:
        return math.gamma(self.alpha)

    @property
    def rate(self) -> float:
        """Predicted convergence exponent alpha + H - 1."""
        return self.alpha + self.hurst - 1.0


@dataclass
class PathEnsemble:
    grid: GridSpec
    states: np.ndarray
    valid: np.ndarray | None = None

    def __post_init__(self):
        if self.valid is None:
            self.valid = np.all(np.isfinite(self.states), axis=1)

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n_invalid(self) -> int:
        return int(np.count_nonzero(~self.valid))

    def at(self, n) -> np.ndarray:
        return self.states[:, n]


def run_em(model: ModelParams, grid: GridSpec, g_values, check_valid: bool = True) -> PathEnsemble:
    """Run the scheme for every row of ``g_values`` (shape M x N)."""
    g = np.atleast_2d(np.asarray(g_values, dtype=float))
    N = grid.N
    if g.shape[1] != N:
        raise ValueError(f"g_values has {g.shape[1]} columns, grid has N={N}")
    M = g.shape[0]
    omega = weight_vector(N, grid.h, model.alpha)[::-1] / model.gamma_alpha
    f = model.drift.f
    x = np.empty((M, N + 1))
    fx = np.empty((M, N))
    x[:, 0] = model.x0
    with np.errstate(over="ignore", invalid="ignore"):
        for n in range(1, N + 1):
            fx[:, n - 1] = f(x[:, n - 1])
            # w[n][j] for j = 1..n is omega reversed, lags n-1 .. 0
            x[:, n] = model.x0 + fx[:, :n] @ omega[N - n:] + g[:, n - 1]
    ens = PathEnsemble(grid, x)
    if check_valid and ens.n_invalid > MAX_INVALID_FRACTION * M:
        raise InvalidPathsError(f"{ens.n_invalid} of {M} paths became non-finite")
    if ens.n_invalid:
        log.warning("%d non-finite paths excluded", ens.n_invalid)
    return ens


def subsample(values, ratio: int) -> np.ndarray:
    """Coarse-grid values ``coarse[n] = fine[n * ratio]`` (1-based times)."""
    values = np.asarray(values)
    N = values.shape[-1]
    if ratio < 1 or N % ratio:
        raise ValueError(f"ratio {ratio} does not divide {N}")
    return values[..., ratio - 1::ratio]


def run_coupled(model: ModelParams, fine_N: int, ratios, g_fine, g_levels=None):
    """Fine run plus one coarse run per ratio, all on the same G draws.

    Coarse runs see ``g_fine`` at their own times unless ``g_levels`` maps
    the ratio to separate noise values. Returns ``(fine, {ratio: coarse})``.
    """
    fine_grid = GridSpec(model.T, fine_N)
    fine = run_em(model, fine_grid, g_fine)
    coarse = {}
    for r in ratios:
        if r == 1:
            coarse[r] = fine
            continue
        g = subsample(g_fine, r) if g_levels is None else g_levels[r]
        coarse[r] = run_em(model, fine_grid.coarsen(r), g)
    return fine, coarse


def strong_error(coarse: PathEnsemble, fine: PathEnsemble, at=None) -> np.ndarray:
    """RMS difference at shared times.

    ``at`` holds coarse time indices (default: all, 0..N_coarse). Paths
    invalid in either ensemble are dropped.
    """
    if coarse.n_paths != fine.n_paths:
        raise ValueError("ensembles have different path counts")
    if fine.grid.N % coarse.grid.N:
        raise ValueError("coarse grid is not nested in the fine grid")
    ratio = fine.grid.N // coarse.grid.N
    if at is None:
        at = np.arange(coarse.grid.N + 1)
    at = np.atleast_1d(at)
    ok = coarse.valid & fine.valid
    diff = coarse.states[ok][:, at] - fine.states[ok][:, at * ratio]
    return np.sqrt(np.mean(diff ** 2, axis=0))


def classical_em(f, x0: float, h: float, dW) -> np.ndarray:
    """Plain explicit Euler for dx = f(x) dt + dW with given increments."""
    dW = np.atleast_2d(np.asarray(dW, dtype=float))
    x = np.empty((dW.shape[0], dW.shape[1] + 1))
    x[:, 0] = x0
    for n in range(dW.shape[1]):
        x[:, n + 1] = x[:, n] + h * f(x[:, n]) + dW[:, n]
    return x
