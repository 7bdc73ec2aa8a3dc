"""Covariance structure of fractional Brownian motion and of the singular
convolution G.

The H inner product of two functions is

    <phi, psi>_H = H(2H-1) int int phi(u) psi(v) |u-v|^(2H-2) du dv,

which for indicators of intervals reduces to the fBm increment covariance.

For G(t) = sigma/Gamma(alpha) int_0^t (t-u)^(alpha-1) dW_H(u) the double
integral collapses after integrating the |u-v|^(2H-2) factor against one
power kernel in closed form. With s <= t, d = t - s:

    Cov(G(t), G(s)) = sigma^2 K int_0^s [w^(alpha-1) (d+w)^(alpha+2H-2)
                                          + w^(alpha+2H-2) (d+w)^(alpha-1)] dw,
    K = H Gamma(2H) / (Gamma(alpha) Gamma(alpha+2H-1)).

The remaining one-dimensional integral is evaluated by Gauss-Jacobi on
[0, min(s, d)] (absorbing the endpoint power) and composite Gauss-Legendre
in log(w) on [d, s]. Both pieces have integrands analytic in a strip of
fixed width, so a fixed node count gives near machine precision.
"""

from functools import lru_cache
import logging
import math

import numpy as np
from scipy.special import roots_jacobi, roots_legendre

from .volterra_kernel import GridSpec

log = logging.getLogger(__name__)

TOL_QUAD = 1e-6


class QuadratureError(RuntimeError):
    """Two quadrature refinement levels disagree beyond tolerance."""


def increment_covariance(a, b, c, d, H):
    """E[(W(b)-W(a)) (W(d)-W(c))] for fBm with Hurst index ``H``."""
    a, b, c, d = (np.asarray(x, dtype=float) for x in (a, b, c, d))
    if np.any(b < a) or np.any(d < c):
        raise ValueError("interval endpoints reversed")
    p = 2.0 * H
    out = 0.5 * (np.abs(b - c) ** p + np.abs(a - d) ** p
                 - np.abs(b - d) ** p - np.abs(a - c) ** p)
    return float(out) if out.ndim == 0 else out


def step_gram(edges, H) -> np.ndarray:
    """Gram matrix of interval indicators ``[edges[i], edges[i+1])``."""
    e = np.asarray(edges, dtype=float)
    lo, hi = e[:-1], e[1:]
    return increment_covariance(lo[:, None], hi[:, None], lo[None, :], hi[None, :], H)


def h_inner_product_step(phi, psi, H, grid: GridSpec | None = None, edges=None) -> float:
    """H inner product of two step functions.

    ``phi`` and ``psi`` hold one value per cell. Cells are the grid cells by
    default, or the partition given by ``edges``.
    """
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi, dtype=float)
    if phi.shape != psi.shape:
        raise ValueError("phi and psi have different lengths")
    if edges is None:
        if grid is None:
            raise ValueError("need a grid or explicit edges")
        if len(phi) != grid.N:
            raise ValueError(f"expected {grid.N} cell values, got {len(phi)}")
        edges = grid.times
    return float(phi @ step_gram(edges, H) @ psi)


def g_prefactor(alpha, H):
    """Constant K in front of the reduced covariance integral.

    Equals H(2H-1)B(alpha, 2H-1)/Gamma(alpha)^2 for H > 1/2 and stays finite
    at H = 1/2, where the fBm is a Brownian motion.
    """
    return H * math.gamma(2 * H) / (math.gamma(alpha) * math.gamma(alpha + 2 * H - 1))


def g_variance_constant(alpha, H):
    """C_G with Var G(t) = sigma^2 C_G t^(2 alpha + 2H - 2)."""
    e = alpha + H - 1.0
    if e <= 0:
        raise ValueError("need alpha + H > 1")
    return g_prefactor(alpha, H) / e


def g_variance(t, alpha, H, sigma=1.0):
    t = np.asarray(t, dtype=float)
    return sigma ** 2 * g_variance_constant(alpha, H) * t ** (2 * alpha + 2 * H - 2)


@lru_cache(maxsize=16)
def _jacobi_rule(order, a):
    # nodes/weights on [0, 1] for weight x^(a-1)
    y, w = roots_jacobi(order, 0.0, a - 1.0)
    return (y + 1.0) / 2.0, w / 2.0 ** a


@lru_cache(maxsize=16)
def _legendre_rule(order):
    y, w = roots_legendre(order)
    return (y + 1.0) / 2.0, w / 2.0


def _power_integral(s, d, a, p, order):
    """int_0^s w^(a-1) (d+w)^p dw for arrays ``s > 0``, ``d > 0``.

    ``order`` scales the node counts; order=1 is the production level.
    """
    s = np.asarray(s, dtype=float)
    d = np.asarray(d, dtype=float)
    m = np.minimum(s, d)
    xj, wj = _jacobi_rule(12 * order, a)
    head = m ** a * ((d[..., None] + m[..., None] * xj) ** p @ wj)

    # [d, s] in tau = log(w/d), split into panels of length <= 1/order
    ratio = np.maximum(s / d, 1.0)
    L = np.log(ratio)
    n_pan = max(1, int(math.ceil(float(L.max(initial=0.0)) * order)))
    xl, wl = _legendre_rule(8 * order)
    tau = (np.arange(n_pan)[:, None] + xl[None, :]).ravel() / n_pan
    wt = np.tile(wl, n_pan) / n_pan
    tt = L[..., None] * tau
    e = np.exp(tt)
    vals = e ** a * (1.0 + e) ** p
    tail = d ** (a + p) * L * (vals @ wt)
    return head + tail


def _reduced_covariance(s, d, alpha, H, order=1):
    """Covariance with sigma = 1, as the 1-D integral over [0, s]."""
    s = np.asarray(s, dtype=float)
    d = np.asarray(d, dtype=float)
    out = np.empty(np.broadcast(s, d).shape)
    s, d = np.broadcast_to(s, out.shape), np.broadcast_to(d, out.shape)
    diag = d <= 0
    e = 2 * alpha + 2 * H - 2
    out[diag] = 2.0 * s[diag] ** e / e
    off = ~diag
    if off.any():
        so, do = s[off], d[off]
        out[off] = (_power_integral(so, do, alpha, alpha + 2 * H - 2, order)
                    + _power_integral(so, do, alpha + 2 * H - 1, alpha - 1, order))
    return g_prefactor(alpha, H) * out


def g_covariance(t, s, alpha, H, sigma=1.0, check=True):
    """Cov(G(t), G(s)) for ``0 < s <= t``."""
    if not 0 < s <= t:
        raise ValueError(f"need 0 < s <= t, got s={s}, t={t}")
    val = float(_reduced_covariance(s, t - s, alpha, H))
    if check and t > s:
        ref = float(_reduced_covariance(s, t - s, alpha, H, order=2))
        if abs(val - ref) > TOL_QUAD * abs(ref):
            raise QuadratureError(f"covariance ({t}, {s}) not converged: {val} vs {ref}")
    return sigma ** 2 * val


def _integer_cov_table(N, alpha, H, chunk=1 << 16):
    """c[m-1, n-1] = Cov(G(m), G(n)) on the unit-step grid (sigma=1)."""
    c = np.empty((N, N))
    m_idx, n_idx = np.triu_indices(N)
    for lo in range(0, len(m_idx), chunk):
        mi, ni = m_idx[lo:lo + chunk], n_idx[lo:lo + chunk]
        vals = _reduced_covariance(mi + 1.0, (ni - mi).astype(float), alpha, H)
        c[mi, ni] = vals
        c[ni, mi] = vals
    return c


def _check_table(c, alpha, H):
    """Recompute a sample of entries at doubled node counts."""
    N = c.shape[0]
    if N < 2:
        return 0.0
    # nearest neighbours are the hardest entries; add first row, last column
    # and a strided interior sample
    k = np.arange(N - 1)
    stride = np.arange(0, N - 1, max(1, N // 32))
    m = np.r_[k, np.zeros(N - 1, int), stride, stride]
    n = np.r_[k + 1, k + 1, np.full(len(stride), N - 1), np.minimum(2 * stride + 1, N - 1)]
    ref = _reduced_covariance(m + 1.0, (n - m).astype(float), alpha, H, order=2)
    err = float(np.max(np.abs(c[m, n] - ref) / np.abs(ref)))
    if err > TOL_QUAD:
        raise QuadratureError(f"covariance matrix quadrature not converged (rel diff {err:.2e})")
    return err


@lru_cache(maxsize=8)
def _cached_matrix(T, N, alpha, H, sigma):
    grid = GridSpec(T, N)
    c = _integer_cov_table(N, alpha, H)
    _check_table(c, alpha, H)
    c *= sigma ** 2 * grid.h ** (2 * alpha + 2 * H - 2)
    c.setflags(write=False)
    return c


def build_g_covariance_matrix(grid: GridSpec, alpha, H, sigma=1.0) -> np.ndarray:
    """Covariance of (G(t_1), ..., G(t_N)); read-only, cached per parameters.

    Uses self-similarity, Cov(G(mh), G(nh)) = h^(2a+2H-2) Cov(G(m), G(n)).
    """
    if alpha + H <= 1:
        raise ValueError("need alpha + H > 1")
    return _cached_matrix(float(grid.T), int(grid.N), float(alpha), float(H), float(sigma))
