import math

import numpy as np
import pytest

from fgle_lab.convolution_sampler import (SamplerError, build_exact_sampler, riemann_covariance_matrix,
                                          riemann_matrix, sample_exact, sample_paths, sample_riemann)
from fgle_lab.fractional_noise import fgn_to_fbm
from fgle_lab.hilbert_space import build_g_covariance_matrix, g_variance
from fgle_lab.rng import path_rng
from fgle_lab.volterra_kernel import GridSpec, build_weight_matrix


def test_exact_sampler_factor():
    g = GridSpec(1.0, 32)
    s = build_exact_sampler(g, 0.7, 0.7, sigma=1.5)
    np.testing.assert_allclose(s.chol @ s.chol.T, s.covariance, rtol=0, atol=1e-12)
    assert s.jitter_used == 0.0
    np.testing.assert_allclose(s.covariance, 2.25 * build_g_covariance_matrix(g, 0.7, 0.7), rtol=1e-14)


def test_single_step_sampler():
    s = build_exact_sampler(GridSpec(0.5, 1), 0.8, 0.6)
    assert s.chol[0, 0] == pytest.approx(math.sqrt(g_variance(0.5, 0.8, 0.6)), rel=1e-14)


def test_sampler_empirical_covariance_n16():
    g = GridSpec(1.0, 16)
    s = build_exact_sampler(g, 0.7, 0.7)
    M = 100_000
    x = sample_paths(s, 5, 0, M)
    emp = x.T @ x / M
    se = np.sqrt((x[:, :, None] * x[:, None, :]).var(axis=0) / M)
    assert np.max(np.abs(emp - s.covariance) / se) < 4.5


def test_sample_paths_chunk_invariance():
    s = build_exact_sampler(GridSpec(1.0, 8), 0.7, 0.7)
    whole = sample_paths(s, 3, 0, 10)
    parts = np.vstack([sample_paths(s, 3, 0, 4), sample_paths(s, 3, 4, 10)])
    np.testing.assert_array_equal(whole, parts)
    np.testing.assert_allclose(sample_exact(s, path_rng(3, 2)), whole[2], rtol=1e-14, atol=1e-15)


def test_sampler_failure(monkeypatch):
    import fgle_lab.convolution_sampler as cs
    bad = -np.eye(4)
    monkeypatch.setattr(cs, "build_g_covariance_matrix", lambda *a, **k: bad)
    with pytest.raises(SamplerError):
        cs.build_exact_sampler(GridSpec(1.0, 4), 0.7, 0.7)


def test_riemann_matrix_matches_weights():
    g = GridSpec(2.0, 5)
    A = riemann_matrix(g, 0.6)
    W = build_weight_matrix(g, 0.6).dense()[1:, 1:]
    np.testing.assert_allclose(A, W / g.h / math.gamma(0.6), rtol=1e-13)


def test_riemann_brownian_case_is_fbm():
    # alpha = 1: the Riemann sum is the fBm itself
    g = GridSpec(1.0, 6)
    inc = np.arange(1.0, 7.0) / 10
    G = sample_riemann(g, 1.0, 1.0, fgn_to_fbm(inc, g.h, 0.7))
    np.testing.assert_allclose(G, np.cumsum(inc), rtol=1e-14)
    with pytest.raises(ValueError):
        sample_riemann(GridSpec(1.0, 3), 1.0, 1.0, fgn_to_fbm(inc, g.h, 0.7))


def test_riemann_covariance_converges_to_exact():
    a, H = 0.7, 0.7
    errs = []
    for N in (32, 64, 128):
        g = GridSpec(1.0, N)
        diff = np.diag(riemann_covariance_matrix(g, a, H)) - np.diag(build_g_covariance_matrix(g, a, H))
        errs.append(np.abs(diff).max())
    assert errs[0] > errs[1] > errs[2]
    # the worst entry sits at t_1, where self-similarity fixes the ratio
    np.testing.assert_allclose(np.array(errs[:-1]) / errs[1:], 2 ** 0.8, rtol=1e-6)
