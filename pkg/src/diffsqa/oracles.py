"""Closed-form data distributions with exact denoisers, drifts and log-densities.

An isotropic Gaussian mixture stays a mixture under additive Gaussian noise, so
its minimum-MSE denoiser is a responsibility-weighted posterior mean and the
drift Jacobian has an analytic form.  These stand in for a trained network when
checking the likelihood engine.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp, softmax

from .diffusion import DEFAULT_SIGMA_MIN
from .errors import InvalidArgument


@dataclass(frozen=True)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    component_std: float

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        mu = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        if mu.shape[0] != w.size:
            raise InvalidArgument(f"{w.size} weights but {mu.shape[0]} means")
        if np.any(w <= 0) or abs(w.sum() - 1.0) > 1e-12:
            raise InvalidArgument("mixture weights must be positive and sum to 1")
        if self.component_std <= 0:
            raise InvalidArgument("component_std must be positive")
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "means", mu)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @classmethod
    def gaussian(cls, dim: int, std: float = 1.0) -> "GaussianMixture":
        return cls(np.ones(1), np.zeros((1, dim)), std)

    @classmethod
    def symmetric_pair(cls, mean, std: float) -> "GaussianMixture":
        mean = np.asarray(mean, dtype=np.float64)
        return cls(np.array([0.5, 0.5]), np.stack([mean, -mean]), std)


def _prep(gmm: GaussianMixture, x):
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != gmm.dim:
        raise InvalidArgument(f"point dimension {x.shape[-1]} does not match mixture dimension {gmm.dim}")
    return x


def _responsibilities(gmm: GaussianMixture, x: np.ndarray, var: float) -> np.ndarray:
    sq = np.sum((x[..., None, :] - gmm.means) ** 2, axis=-1)
    return softmax(np.log(gmm.weights) - sq / (2.0 * var), axis=-1)


def oracle_log_density(gmm: GaussianMixture, x, sigma: float = 0.0):
    """log p_sigma(x) for the mixture convolved with N(0, sigma^2 I)."""
    x = _prep(gmm, x)
    var = gmm.component_std**2 + sigma**2
    sq = np.sum((x[..., None, :] - gmm.means) ** 2, axis=-1)
    log_comp = np.log(gmm.weights) - 0.5 * gmm.dim * np.log(2 * np.pi * var) - sq / (2.0 * var)
    return logsumexp(log_comp, axis=-1)


def oracle_score(gmm: GaussianMixture, x, sigma: float) -> np.ndarray:
    x = _prep(gmm, x)
    var = gmm.component_std**2 + sigma**2
    mean_post = _responsibilities(gmm, x, var) @ gmm.means
    return (mean_post - x) / var


def oracle_denoiser(gmm: GaussianMixture, x, sigma: float) -> np.ndarray:
    """Posterior mean E[x0 | x], equal to ``x + sigma^2 * score``."""
    if sigma <= 0:
        raise InvalidArgument(f"sigma must be positive, got {sigma}")
    x = _prep(gmm, x)
    s2 = gmm.component_std**2
    var = s2 + sigma**2
    mean_post = _responsibilities(gmm, x, var) @ gmm.means
    return (s2 * x + sigma**2 * mean_post) / var


def oracle_drift(gmm: GaussianMixture, x, t: float, sigma_min: float = DEFAULT_SIGMA_MIN) -> np.ndarray:
    if t < sigma_min:
        raise InvalidArgument(f"drift evaluated at t={t} below sigma_min={sigma_min}")
    x = _prep(gmm, x)
    return (x - oracle_denoiser(gmm, x, t)) / t


def oracle_drift_and_vjp(gmm: GaussianMixture, x, t: float, v, sigma_min: float = DEFAULT_SIGMA_MIN):
    """Exact drift and ``v^T df/dx``.

    ``dD/dx = (s^2/V) I + (t^2/V^2) Cov_r(mu)`` where ``Cov_r`` is the
    responsibility-weighted covariance of the component means; it is symmetric,
    so the VJP is the JVP.
    """
    if t < sigma_min:
        raise InvalidArgument(f"drift evaluated at t={t} below sigma_min={sigma_min}")
    x = _prep(gmm, x)
    v = np.asarray(v, dtype=np.float64)
    if v.shape != x.shape:
        raise InvalidArgument(f"cotangent shape {v.shape} does not match {x.shape}")
    s2 = gmm.component_std**2
    var = s2 + t**2
    r = _responsibilities(gmm, x, var)
    mean_post = r @ gmm.means
    d = (s2 * x + t**2 * mean_post) / var
    proj = v @ gmm.means.T
    cov_v = (r * proj) @ gmm.means - np.sum(v * mean_post, axis=-1, keepdims=True) * mean_post
    jd_v = (s2 / var) * v + (t**2 / var**2) * cov_v
    return (x - d) / t, (v - jd_v) / t


def oracle_drift_vjp(gmm: GaussianMixture, x, t: float, v, sigma_min: float = DEFAULT_SIGMA_MIN) -> np.ndarray:
    return oracle_drift_and_vjp(gmm, x, t, v, sigma_min)[1]
