import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from diffsqa.diffusion import (NoiseSchedule, denoise, drift, drift_and_vjp, drift_vjp, karras_time_grid,
                               precond_constants)
from diffsqa.errors import InvalidArgument
from diffsqa.numerics import SeededRng
from diffsqa.oracles import GaussianMixture, oracle_drift

from conftest import small_params


def zero_net(in_dim=6):
    p = small_params(in_dim)
    return p.copy_with([(np.zeros_like(w), np.zeros_like(b)) for w, b in p.weights])


def test_precond_at_sigma_data():
    c_in, c_out, c_skip, c_noise = precond_constants(0.5, 0.5)
    assert c_skip == pytest.approx(0.5, abs=1e-15)
    assert c_out == pytest.approx(0.25 / math.sqrt(0.5), abs=1e-15)
    assert c_out == pytest.approx(0.35355339, abs=1e-8)
    assert c_in == pytest.approx(1.41421356, abs=1e-8)
    assert c_noise == pytest.approx(-0.17328680, abs=1e-8)


def test_precond_small_sigma_limit():
    _, c_out, c_skip, _ = precond_constants(1e-9, 0.5)
    assert c_skip == pytest.approx(1.0, abs=1e-15)
    assert c_out == pytest.approx(0.0, abs=1e-8)


def test_precond_rejects_nonpositive():
    with pytest.raises(InvalidArgument):
        precond_constants(0.0, 0.5)
    with pytest.raises(InvalidArgument):
        precond_constants(1.0, -0.5)


@settings(max_examples=100, deadline=None)
@given(sigma=st.floats(1e-4, 1e3), sd=st.floats(1e-2, 10.0))
def test_c_in_identity(sigma, sd):
    c_in, _, _, _ = precond_constants(sigma, sd)
    assert c_in**2 * (sigma**2 + sd**2) == pytest.approx(1.0, rel=1e-14)


def test_zero_network_denoiser_is_skip():
    p = zero_net()
    x = SeededRng(0).normal(6)
    _, _, c_skip, _ = precond_constants(1.3, p.sigma_data)
    assert np.allclose(denoise(p, x, 1.3), c_skip * x, rtol=1e-15, atol=0)


def test_denoiser_near_identity_at_sigma_min():
    p = small_params()
    x = SeededRng(1).normal(6)
    assert np.max(np.abs(denoise(p, x, 0.002) - x)) < 0.02


def test_drift_fixed_point_when_denoiser_is_identity():
    # a zero network at tiny sigma gives D = c_skip x, and c_skip -> 1
    p = zero_net()
    x = SeededRng(0).normal(6)
    f = drift(p, x, 1e-3, sigma_min=1e-3)
    _, _, c_skip, _ = precond_constants(1e-3, p.sigma_data)
    assert np.allclose(f, (1 - c_skip) * x / 1e-3, rtol=1e-12)
    assert np.max(np.abs(f)) < 1e-2


def test_drift_rejects_small_t():
    with pytest.raises(InvalidArgument):
        drift(small_params(), np.zeros(6), 0.001)


def test_gaussian_oracle_drift_closed_form():
    g = GaussianMixture.gaussian(4, 1.0)
    x = SeededRng(2).normal(4)
    for t in (0.01, 0.5, 3.0, 80.0):
        assert np.allclose(oracle_drift(g, x, t), x * t / (1 + t * t), rtol=1e-13)


def test_symmetric_mixture_drift_is_odd():
    g = GaussianMixture.symmetric_pair([1.0, -0.5], 0.4)
    x = SeededRng(3).normal(2)
    assert np.allclose(oracle_drift(g, -x, 0.7), -oracle_drift(g, x, 0.7), rtol=1e-13)


def test_zero_network_vjp():
    p = zero_net()
    v = SeededRng(0).normal(6)
    t = 2.0
    _, _, c_skip, _ = precond_constants(t, p.sigma_data)
    assert np.allclose(drift_vjp(p, np.ones(6), t, v), v * (1 - c_skip) / t, rtol=1e-15)


@pytest.mark.parametrize("seed", range(10))
def test_drift_vjp_finite_differences(seed):
    rng = SeededRng(seed)
    p = small_params(seed=seed)
    x, v, d = rng.normal(6), rng.normal(6), rng.normal(6)
    t = float(np.exp(rng.uniform(1)[0] * np.log(80 / 0.002)) * 0.002)
    h = 1e-5 * max(1.0, t)
    fd = ((drift(p, x + h * d, t) - drift(p, x - h * d, t)) / (2 * h)) @ v
    assert abs(drift_vjp(p, x, t, v) @ d - fd) <= 1e-6 * abs(fd)


def test_drift_vjp_linear():
    p = small_params()
    rng = SeededRng(9)
    x, v1, v2 = rng.normal(6), rng.normal(6), rng.normal(6)
    assert np.allclose(drift_vjp(p, x, 0.8, v1 + 2 * v2),
                       drift_vjp(p, x, 0.8, v1) + 2 * drift_vjp(p, x, 0.8, v2), rtol=1e-12, atol=1e-14)


def test_drift_and_vjp_consistent():
    p = small_params()
    x, v = SeededRng(1).normal(6), SeededRng(2).normal(6)
    f, g = drift_and_vjp(p, x, 1.5, v)
    assert np.array_equal(f, drift(p, x, 1.5))
    assert np.array_equal(g, drift_vjp(p, x, 1.5, v))


def test_grid_endpoints_and_monotone():
    s = NoiseSchedule()
    grid = karras_time_grid(s)
    assert len(grid) == 32
    assert grid[0] == 0.002 and grid[-1] == 80.0
    assert np.all(np.diff(grid) > 0)


def test_grid_second_point_by_formula():
    grid = karras_time_grid(NoiseSchedule(0.002, 80.0, 7.0, 32))
    lo, hi = 0.002 ** (1 / 7), 80.0 ** (1 / 7)
    assert grid[1] == pytest.approx((lo + (hi - lo) / 31) ** 7, rel=1e-14)


def test_grid_rho_one_is_uniform():
    grid = karras_time_grid(NoiseSchedule(1.0, 5.0, 1.0, 5))
    assert np.allclose(grid, [1, 2, 3, 4, 5], rtol=1e-15)


def test_schedule_validation():
    with pytest.raises(InvalidArgument):
        NoiseSchedule(1.0, 0.5)
    with pytest.raises(InvalidArgument):
        NoiseSchedule(num_steps=1)
