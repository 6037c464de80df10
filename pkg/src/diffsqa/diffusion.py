"""Noise schedule, preconditioning and the probability-flow drift for sigma(t) = t.

With sigma(t) = t the probability-flow ODE reduces to ``dx/dt = (x - D(x; t)) / t``
where ``D`` is the preconditioned denoiser

    D(x; sigma) = c_skip(sigma) x + c_out(sigma) F(c_in(sigma) x; c_noise(sigma)).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import network
from .errors import InvalidArgument
from .network import DenoiserParams

DEFAULT_SIGMA_MIN = 0.002
DEFAULT_SIGMA_MAX = 80.0
DEFAULT_RHO = 7.0
DEFAULT_NUM_STEPS = 32


@dataclass(frozen=True)
class NoiseSchedule:
    sigma_min: float = DEFAULT_SIGMA_MIN
    sigma_max: float = DEFAULT_SIGMA_MAX
    rho: float = DEFAULT_RHO
    num_steps: int = DEFAULT_NUM_STEPS

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise InvalidArgument(f"need 0 < sigma_min < sigma_max, got {self.sigma_min}, {self.sigma_max}")
        if self.rho <= 0:
            raise InvalidArgument(f"rho must be positive, got {self.rho}")
        if self.num_steps < 2:
            raise InvalidArgument(f"num_steps must be >= 2, got {self.num_steps}")

    @property
    def T(self) -> float:
        return self.sigma_max

    def with_steps(self, num_steps: int) -> "NoiseSchedule":
        return NoiseSchedule(self.sigma_min, self.sigma_max, self.rho, num_steps)


def karras_time_grid(schedule: NoiseSchedule) -> np.ndarray:
    """Ascending rho-warped grid from sigma_min to sigma_max (``num_steps`` points)."""
    inv = 1.0 / schedule.rho
    frac = np.arange(schedule.num_steps) / (schedule.num_steps - 1)
    lo, hi = schedule.sigma_min**inv, schedule.sigma_max**inv
    grid = (lo + frac * (hi - lo)) ** schedule.rho
    grid[0], grid[-1] = schedule.sigma_min, schedule.sigma_max
    return grid


def precond_constants(sigma, sigma_data: float):
    """Return ``(c_in, c_out, c_skip, c_noise)``; ``sigma`` may be an array."""
    sigma = np.asarray(sigma, dtype=np.float64)
    if np.any(sigma <= 0) or sigma_data <= 0:
        raise InvalidArgument("sigma and sigma_data must be positive")
    total = sigma**2 + sigma_data**2
    c_skip = sigma_data**2 / total
    c_out = sigma * sigma_data / np.sqrt(total)
    c_in = 1.0 / np.sqrt(total)
    c_noise = np.log(sigma) / 4.0
    if sigma.ndim == 0:
        return float(c_in), float(c_out), float(c_skip), float(c_noise)
    return c_in, c_out, c_skip, c_noise


def _col(c, x):
    c = np.asarray(c)
    return c[:, None] if c.ndim == 1 and x.ndim == 2 else c


def denoise(params: DenoiserParams, x, sigma) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    c_in, c_out, c_skip, c_noise = precond_constants(sigma, params.sigma_data)
    f = network.forward(params, _col(c_in, x) * x, c_noise)
    return _col(c_skip, x) * x + _col(c_out, x) * f


def _check_time(t: float, sigma_min: float):
    if t < sigma_min:
        raise InvalidArgument(f"drift evaluated at t={t} below sigma_min={sigma_min}")


def drift(params: DenoiserParams, x, t: float, sigma_min: float = DEFAULT_SIGMA_MIN) -> np.ndarray:
    _check_time(t, sigma_min)
    x = np.asarray(x, dtype=np.float64)
    return (x - denoise(params, x, t)) / t


def drift_and_vjp(params: DenoiserParams, x, t: float, v, sigma_min: float = DEFAULT_SIGMA_MIN):
    """``(f(x; t), v^T df/dx)`` from one forward and one backward pass."""
    _check_time(t, sigma_min)
    x = np.asarray(x, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    c_in, c_out, c_skip, c_noise = precond_constants(t, params.sigma_data)
    f_out, f_vjp = network.forward_and_vjp(params, c_in * x, c_noise, v)
    d = c_skip * x + c_out * f_out
    return (x - d) / t, (v - c_skip * v - c_out * c_in * f_vjp) / t


def drift_vjp(params: DenoiserParams, x, t: float, v, sigma_min: float = DEFAULT_SIGMA_MIN) -> np.ndarray:
    return drift_and_vjp(params, x, t, v, sigma_min)[1]
