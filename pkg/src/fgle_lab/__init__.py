"""Simulation laboratory for the overdamped generalized Langevin equation
driven by fractional noise.

The model is the stochastic Volterra equation

    x(t) = x0 + 1/Gamma(alpha) int_0^t (t-s)^(alpha-1) f(x(s)) ds + G(t),
    G(t) = sigma/Gamma(alpha) int_0^t (t-s)^(alpha-1) dW_H(s),

with W_H a fractional Brownian motion of Hurst index H in (1/2, 1) and
alpha in (1-H, 1).
"""

from .volterra_kernel import GridSpec
from .em_integrator import ModelParams, PathEnsemble, Drift, drift_preset

__version__ = "0.1.0"

__all__ = ["GridSpec", "ModelParams", "PathEnsemble", "Drift", "drift_preset"]
