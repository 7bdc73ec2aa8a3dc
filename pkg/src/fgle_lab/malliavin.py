"""Discrete Malliavin derivative of the EM solution.

Pointwise in r, the derivative obeys the linear recursion

    D_r x_n = 1/Gamma(a) sum_j f'(x_{j-1}) D_r x_{j-1} 1{r < t_{j-1}} w[n][j]
              + sigma/Gamma(a) (t_n - r)^(a-1),     r < t_n,

and vanishes for r >= t_n. Unrolling it shows that D x_n is a finite
combination of the kernels of G:

    D_r x_n = sigma/Gamma(a) sum_{k<=n} y_k (t_k - r)^(a-1) 1{r < t_k},
    y_k = d x_n / d G(t_k),

where the sensitivities y come from one backward sweep. The H norm of such
a combination is the quadratic form y' C y with C the covariance matrix of
(G(t_1), ..., G(t_n)), with no quadrature beyond the one inside C. That is
the production norm; :func:`h_norm_sq_subgrid` is an independent
step-function approximation on the r-subgrid.
"""

from dataclasses import dataclass
import math

import numpy as np
from scipy.special import betainc, beta as beta_fn

from .em_integrator import ModelParams
from .hilbert_space import g_prefactor, step_gram
from .volterra_kernel import GridSpec, weight_vector


@dataclass
class MalliavinField:
    """D_{r_m} x_n for one path on an r-subgrid.

    ``values[m, n]`` with n = 0..N; ``h_norms`` maps target index n to
    ||D x_n||_H^2.
    """

    grid: GridSpec
    r_subgrid: np.ndarray
    values: np.ndarray
    h_norms: dict


def default_r_subgrid(grid: GridSpec, refine: int = 1, n_geometric: int = 4, targets=None) -> np.ndarray:
    """Midpoints of ``refine`` equal sub-cells per EM cell, plus geometric
    points t_n - h/4, t_n - h/8, ... inside the last cell before each target.
    """
    h = grid.h
    if targets is None:
        targets = [grid.N]
    sub = (np.arange(grid.N * refine) + 0.5) * (h / refine)
    extra = [grid.times[n] - h * 0.5 ** (k + 2) for n in targets for k in range(n_geometric)]
    return np.unique(np.r_[sub, extra])


def malliavin_derivative(states, model: ModelParams, grid: GridSpec, r) -> np.ndarray:
    """D_r x_n for n = 0..N of one path, by the forward recursion.

    ``r`` may be a scalar or an array; the result has shape (N+1,) or
    (len(r), N+1).
    """
    x = np.asarray(states, dtype=float)
    if x.shape != (grid.N + 1,):
        raise ValueError("states must be one path of length N+1")
    scalar = np.ndim(r) == 0
    r = np.atleast_1d(np.asarray(r, dtype=float))
    if np.any(r < 0) or np.any(r >= grid.T):
        raise ValueError("r must lie in [0, T)")
    a = model.alpha
    gam = model.gamma_alpha
    t = grid.times
    omega = weight_vector(grid.N, grid.h, a)[::-1]
    coef = model.drift.df(x[:-1]) / gam
    D = np.zeros((len(r), grid.N + 1))
    for n in range(1, grid.N + 1):
        live = r < t[n]
        # column 0 is identically zero, so the j = 1 term drops out
        D[:, n] = D[:, :n] @ (coef[:n] * omega[grid.N - n:])
        D[live, n] += model.sigma / gam * (t[n] - r[live]) ** (a - 1.0)
    return D[0] if scalar else D


def sensitivities(states, model: ModelParams, grid: GridSpec, n: int | None = None) -> np.ndarray:
    """y[:, k-1] = d x_n / d G(t_k) for k = 1..n (default n = N).

    ``states`` is (M, N+1) or a single path; the backward sweep is
    vectorized over paths.
    """
    x = np.atleast_2d(np.asarray(states, dtype=float))
    if n is None:
        n = grid.N
    omega = weight_vector(grid.N, grid.h, model.alpha)
    fp = model.drift.df(x[:, :n]) / model.gamma_alpha
    y = np.zeros((x.shape[0], n))
    y[:, n - 1] = 1.0
    for k in range(n - 1, 0, -1):
        # y_k = f'(x_k)/Gamma sum_{m=k+1}^n w[m][k+1] y_m
        y[:, k - 1] = fp[:, k] * (y[:, k:n] @ omega[:n - k])
    return y


def h_norm_sq(y, cov) -> np.ndarray:
    """||D x_n||_H^2 per path from sensitivities and the G covariance."""
    y = np.atleast_2d(y)
    n = y.shape[1]
    c = np.asarray(cov)[:n, :n]
    return np.einsum("ij,ij->i", y @ c, y)


def h_norm_sq_subgrid(r_subgrid, d_values, n: int, model: ModelParams, grid: GridSpec) -> float:
    """Step-function approximation of ||D x_n||_H^2 for one path.

    On [0, t_{n-1}) the derivative is replaced by its value at the subgrid
    points, each held constant on a cell whose edges are the midpoints
    between neighbouring points. On the last cell [t_{n-1}, t_n) it is the
    exact power sigma/Gamma (t_n - r)^(a-1), integrated in closed form.
    """
    a, H = model.alpha, model.hurst
    t_n = grid.times[n]
    eps = grid.h
    split = t_n - eps
    r = np.asarray(r_subgrid, dtype=float)
    vals = np.asarray(d_values, dtype=float)
    keep = r < split
    r, vals = r[keep], vals[keep]
    kappa = model.sigma / model.gamma_alpha
    tail = kappa ** 2 * math.gamma(a) ** 2 * g_prefactor(a, H) * 2.0 * eps ** (2 * a + 2 * H - 2) / (2 * a + 2 * H - 2)
    if len(r) == 0:
        return float(tail)
    edges = np.r_[0.0, 0.5 * (r[1:] + r[:-1]), split]
    step = vals @ step_gram(edges, H) @ vals
    dist = t_n - edges
    q = dist ** (a + 2 * H - 1) * beta_fn(a, 2 * H) * betainc(a, 2 * H, np.minimum(eps / dist, 1.0))
    cross = H * (q[:-1] - q[1:])
    return float(step + 2.0 * kappa * (vals @ cross) + tail)


def malliavin_field(states, model: ModelParams, grid: GridSpec, r_subgrid=None,
                    targets=None, cov=None) -> MalliavinField:
    """Derivative values on the subgrid plus H norms at the target times.

    Norms use the exact kernel expansion when ``cov`` (the G covariance on
    ``grid``) is given, and the subgrid approximation otherwise.
    """
    if targets is None:
        targets = [grid.N]
    if r_subgrid is None:
        r_subgrid = default_r_subgrid(grid, targets=targets)
    vals = malliavin_derivative(states, model, grid, r_subgrid)
    norms = {}
    for n in targets:
        if cov is not None:
            norms[n] = float(h_norm_sq(sensitivities(states, model, grid, n), cov)[0])
        else:
            norms[n] = h_norm_sq_subgrid(r_subgrid, vals[:, n], n, model, grid)
    return MalliavinField(grid, np.asarray(r_subgrid), vals, norms)


def check_upper_bound(field: MalliavinField, model: ModelParams, targets=None) -> float:
    """max |D_r x_n| (t_n - r)^(1-a) over subgrid points r < t_n."""
    t = field.grid.times
    cols = range(1, field.grid.N + 1) if targets is None else targets
    best = 0.0
    for n in cols:
        live = field.r_subgrid < t[n]
        if live.any():
            scaled = np.abs(field.values[live, n]) * (t[n] - field.r_subgrid[live]) ** (1.0 - model.alpha)
            best = max(best, float(scaled.max()))
    return best


def check_positivity(h_norms, model: ModelParams, grid: GridSpec) -> float:
    """min over paths of ||D x_N||_H^2 / h^(2a+2H-2)."""
    e = 2 * model.alpha + 2 * model.hurst - 2
    return float(np.min(h_norms) / grid.h ** e)


def d12_error_sq(coarse_states, fine_states, model: ModelParams, fine_grid: GridSpec,
                 ratio: int, cov_fine) -> float:
    """E|x_N^c - x_N^f|^2 + E||D x_N^c - D x_N^f||_H^2 for coupled paths.

    Both derivatives are kernel expansions over the fine times (coarse times
    are every ``ratio``-th fine time), so their difference is normed exactly
    with the fine G covariance.
    """
    xc = np.atleast_2d(coarse_states)
    xf = np.atleast_2d(fine_states)
    if xc.shape[0] != xf.shape[0]:
        raise ValueError("coarse and fine ensembles have different path counts")
    coarse_grid = fine_grid.coarsen(ratio)
    yc = sensitivities(xc, model, coarse_grid)
    yf = sensitivities(xf, model, fine_grid)
    diff = -yf
    diff[:, ratio - 1::ratio] += yc
    dn = h_norm_sq(diff, cov_fine)
    dx = xc[:, -1] - xf[:, -1]
    return float(np.mean(dx ** 2 + dn))
