"""Closed-form and Monte Carlo Gaussian log-likelihoods with input uncertainty.

All values are relative log-likelihoods: normalization constants that do
not depend on the network weights are dropped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionError
from .model import Network, predict
from .perturb import UncertaintySpec, sample_inputs


@dataclass(frozen=True, eq=False)
class CombinedVarianceSpec:
    """Noise model: output variance sigma_f^2 + sigma_z,m^2, optional diagonal
    input covariance per sample (shape (n, d)) or shared (shape (d,))."""

    sigma_f: float = 1.0
    sigma_z: np.ndarray | float = 0.0
    input_cov: np.ndarray | None = None

    def __post_init__(self):
        if not self.sigma_f > 0:
            raise ValueError("sigma_f must be positive")
        sz = np.asarray(self.sigma_z, dtype=np.float64)
        if np.any(sz < 0):
            raise ValueError("sigma_z must be >= 0")
        object.__setattr__(self, "sigma_z", sz)
        if self.input_cov is not None:
            c = np.asarray(self.input_cov, dtype=np.float64)
            if np.any(c < 0) or not np.all(np.isfinite(c)):
                raise ValueError("input covariance entries must be finite and >= 0")
            object.__setattr__(self, "input_cov", c)

    def output_variance(self, n):
        v = self.sigma_f**2 + np.broadcast_to(self.sigma_z, (n,)) ** 2
        if np.any(v <= 0):
            raise ValueError("combined variance is zero")
        return v

    def cov_rows(self, n, d):
        if self.input_cov is None:
            return np.zeros((n, d))
        c = self.input_cov
        if c.ndim == 1:
            c = np.broadcast_to(c, (n, c.size))
        if c.shape != (n, d):
            raise DimensionError(f"input covariance has shape {c.shape}, need ({n}, {d}) or ({d},)")
        return c


def _residuals(net, X, Z, output_index):
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Z = np.asarray(Z, dtype=np.float64).reshape(len(X), -1)[:, output_index]
    return X, Z, Z - predict(net, X)[:, output_index]


def gaussian_loglik(net: Network, X, Z, spec: CombinedVarianceSpec, output_index=0):
    """-1/2 sum_m r_m^2 / (sigma_f^2 + sigma_z,m^2)."""
    X, Z, r = _residuals(net, X, Z, output_index)
    return float(-0.5 * np.sum(r * r / spec.output_variance(len(r))))


def input_jacobian(net: Network, X, output_index=0, rel_step=1e-5):
    """d f / d x at every row by central differences, step 1e-5 * max(|x|, 1)."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    n, d = X.shape
    F = np.empty((n, d))
    for j in range(d):
        h = rel_step * np.maximum(np.abs(X[:, j]), 1.0)
        Xp, Xm = X.copy(), X.copy()
        Xp[:, j] += h
        Xm[:, j] -= h
        F[:, j] = (predict(net, Xp)[:, output_index] - predict(net, Xm)[:, output_index]) / (2 * h)
    return F


def added_variance(net, X, spec: CombinedVarianceSpec, output_index=0):
    """F_m C_m F_m^T per row for diagonal C_m."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    C = spec.cov_rows(*X.shape)
    if not np.any(C):
        return np.zeros(len(X))
    F = input_jacobian(net, X, output_index)
    return np.sum(F * F * C, axis=1)


def linearized_loglik(net: Network, X, Z, spec: CombinedVarianceSpec, output_index=0, normalize=True):
    """Gaussian log-likelihood with input uncertainty propagated to first order.

    Each row's variance becomes sigma_f^2 + sigma_z,m^2 + F_m C_m F_m^T. With
    ``normalize`` the term -1/2 log(1 + F C F^T / (sigma_f^2 + sigma_z^2)) is
    included, which makes the value the exact marginal for a linear network
    (on the same scale as :func:`mc_marginal_loglik`); it vanishes for C = 0.
    """
    X, Z, r = _residuals(net, X, Z, output_index)
    base = spec.output_variance(len(r))
    extra = added_variance(net, X, spec, output_index)
    out = -0.5 * np.sum(r * r / (base + extra))
    if normalize:
        out -= 0.5 * np.sum(np.log1p(extra / base))
    return float(out)


def mc_marginal_loglik(net: Network, X, Z, spec: CombinedVarianceSpec, n_mc, seed, output_index=0,
                       return_se=False):
    """sum_m log( 1/n_mc sum_j exp(-1/2 (Z_m - f(x_mj))^2 / (sigma_f^2 + sigma_z,m^2)) )
    with x_mj drawn around X_m from the input covariance.

    With ``return_se`` also returns the delta-method Monte Carlo standard error.
    """
    if n_mc < 1:
        raise ValueError("n_mc must be >= 1")
    X, Z, r0 = _residuals(net, X, Z, output_index)
    n, d = X.shape
    base = spec.output_variance(n)
    C = spec.cov_rows(n, d)
    # rows without input uncertainty reduce to the plain Gaussian term
    terms = -0.5 * r0 * r0 / base
    var = 0.0
    for m in np.flatnonzero(np.any(C > 0, axis=1)):
        s = int(np.random.SeedSequence([int(seed) & (2**64 - 1), 23, int(m)]).generate_state(1)[0])
        xs = sample_inputs(X[m], UncertaintySpec(np.sqrt(C[m]), [0.0]), n_mc, s)
        r = Z[m] - predict(net, xs)[:, output_index]
        a = -0.5 * r * r / base[m]
        amax = a.max()
        e = np.exp(a - amax)
        mu = e.mean()
        terms[m] = amax + np.log(mu)
        if e.size > 1:
            var += e.var(ddof=1) / (e.size * mu * mu)
    total = np.sum(terms)
    if return_se:
        return float(total), float(np.sqrt(var))
    return float(total)
