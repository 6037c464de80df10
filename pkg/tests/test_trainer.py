import csv

import numpy as np
import pytest

from diffsqa.diffusion import denoise
from diffsqa.errors import InvalidArgument
from diffsqa.network import NetworkArch
from diffsqa.numerics import SeededRng
from diffsqa.trainer import (Adam, ArrayPatches, GaussianPatches, SpectrogramPatches, TrainConfig, dsm_loss,
                             final_smoothed_loss, loss_weight, sample_sigma, train, write_train_log)

from conftest import small_params


def zeroed(p):
    return p.copy_with([(np.zeros_like(w), np.zeros_like(b)) for w, b in p.weights])


def test_loss_weight_value():
    assert loss_weight(0.5, 0.5) == pytest.approx(8.0, rel=1e-15)
    assert loss_weight(1.0, 0.5) == pytest.approx(5.0, rel=1e-15)


@pytest.mark.parametrize("sigma", [0.05, 0.5, 3.0])
def test_optimal_denoiser_loss_is_irreducible_variance(sigma):
    # on N(0, sigma_data^2) data the posterior-mean denoiser is c_skip * y, i.e. a zero network,
    # and the irreducible loss lambda * n * sigma^2 s^2 / (sigma^2 + s^2) reduces to n
    p = zeroed(small_params(in_dim=6))
    rng = SeededRng(11)
    clean = 0.5 * rng.normal(6 * 20000).reshape(-1, 6)
    noise = sigma * rng.normal(clean.size).reshape(clean.shape)
    losses = [dsm_loss(p, c, sigma, e)[0] for c, e in zip(clean[:4000], noise[:4000])]
    assert np.mean(losses) / 6 == pytest.approx(1.0, rel=0.05)


def test_dsm_loss_zero_noise_zero_net_small_sigma():
    p = zeroed(small_params())
    x = SeededRng(0).normal(6)
    loss, _ = dsm_loss(p, x, 1e-4, np.zeros(6))
    assert loss < 1e-6


def test_dsm_loss_rejects_nonpositive_sigma():
    with pytest.raises(InvalidArgument):
        dsm_loss(small_params(), np.zeros(6), 0.0, np.zeros(6))


def test_dsm_gradients_match_finite_differences():
    p = small_params(seed=2)
    rng = SeededRng(3)
    x, e = rng.normal(6), 0.7 * rng.normal(6)
    _, grads = dsm_loss(p, x, 0.7, e)
    h = 1e-6
    for layer, (w, b) in enumerate(p.weights):
        for k, tensor in enumerate((w, b)):
            for idx in range(0, tensor.size, max(1, tensor.size // 5)):
                def loss_at(delta):
                    pert = [(ww.copy(), bb.copy()) for ww, bb in p.weights]
                    pert[layer][k].reshape(-1)[idx] += delta
                    return dsm_loss(p.copy_with(pert), x, 0.7, e)[0]
                fd = (loss_at(h) - loss_at(-h)) / (2 * h)
                an = grads[layer][k].reshape(-1)[idx]
                assert abs(an - fd) <= 1e-5 * max(abs(fd), 1e-2)


def test_sample_sigma_median():
    s = sample_sigma(SeededRng(0), -1.2, 1.2, n=20000)
    assert np.median(s) == pytest.approx(np.exp(-1.2), rel=0.05)
    assert np.mean(np.log(s)) == pytest.approx(-1.2, abs=0.03)
    assert isinstance(sample_sigma(SeededRng(0)), float)


def test_adam_zero_gradient_keeps_weights():
    p = small_params()
    opt = Adam(p.weights)
    out = opt.step(p.weights, [(np.zeros_like(w), np.zeros_like(b)) for w, b in p.weights], 1e-3)
    for (w0, b0), (w1, b1) in zip(p.weights, out):
        assert np.array_equal(w0, w1) and np.array_equal(b0, b1)


def test_adam_first_step_is_lr_times_sign():
    p = small_params()
    grads = [(np.full_like(w, 0.3), np.full_like(b, -2.0)) for w, b in p.weights]
    out = Adam(p.weights).step(p.weights, grads, 0.01)
    for (w0, b0), (w1, b1) in zip(p.weights, out):
        assert np.allclose(w0 - w1, 0.01, rtol=1e-6) and np.allclose(b1 - b0, 0.01, rtol=1e-6)


def _gauss_config(**kw):
    base = dict(batch_size=32, total_samples=32 * 40, lr=2e-3, warmup_steps=5, ema_rate=0.9, seed=4)
    base.update(kw)
    return TrainConfig(**base)


def test_training_is_deterministic():
    arch = NetworkArch(4, (8,), 4)
    a = train(GaussianPatches(4, 0.5), _gauss_config(), arch)
    b = train(GaussianPatches(4, 0.5), _gauss_config(), arch)
    for (wa, ba), (wb, bb) in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb) and np.array_equal(ba, bb)
    c = train(GaussianPatches(4, 0.5), _gauss_config(seed=5), arch)
    assert not np.array_equal(a.weights[0][0], c.weights[0][0])


def test_ema_rate_zero_returns_last_iterate():
    arch = NetworkArch(4, (8,), 4)
    hist = []
    one = train(GaussianPatches(4, 0.5), _gauss_config(total_samples=32, ema_rate=0.0), arch, history=hist)
    init = train(GaussianPatches(4, 0.5), _gauss_config(total_samples=32, lr=1e-300, ema_rate=0.0), arch)
    # one Adam step from a common init moves every parameter with a nonzero gradient by lr
    step = np.abs(one.weights[-1][1] - init.weights[-1][1])
    assert np.allclose(step, 2e-3 / 5, rtol=1e-4)
    assert len(hist) == 1 and hist[0]["ema_rate"] == 0.0


def test_loss_decreases_on_gaussian_data():
    hist = []
    train(GaussianPatches(8, 1.0), _gauss_config(total_samples=32 * 300, ema_rate=0.99), NetworkArch(8, (32, 32), 8),
          history=hist)
    first = np.mean([h["loss"] for h in hist[:30]])
    assert final_smoothed_loss(hist) < 0.9 * first


@pytest.mark.slow
def test_learns_gaussian_denoiser():
    s = 0.5
    cfg = _gauss_config(total_samples=64 * 1500, batch_size=64, lr=3e-3, warmup_steps=100, ema_rate=0.99)
    p = train(GaussianPatches(4, s), cfg, NetworkArch(4, (32, 32), 8))
    x = SeededRng(1).normal(400).reshape(100, 4) * 0.8
    for sigma in (0.3, 0.6, 1.2):
        want = s * s * x / (s * s + sigma**2)
        got = denoise(p, x, sigma)
        assert np.linalg.norm(got - want) / np.linalg.norm(want) < 0.1


def test_patch_sources():
    rows = ArrayPatches(np.arange(12.0).reshape(3, 4)).sample(SeededRng(0), 10)
    assert rows.shape == (10, 4) and set(rows[:, 0]) <= {0.0, 4.0, 8.0}
    spec = np.arange(2 * 6, dtype=float).reshape(2, 6)
    src = SpectrogramPatches([spec, np.zeros((2, 2))], 4)
    crops = src.sample(SeededRng(1), 20)
    assert src.dim == 8 and crops.shape == (20, 8)
    for c in crops:
        start = int(c[0])
        assert np.array_equal(c, spec[:, start:start + 4].reshape(-1))
    with pytest.raises(InvalidArgument):
        SpectrogramPatches([np.zeros((2, 3))], 4)


def test_arch_mismatch_rejected():
    with pytest.raises(InvalidArgument):
        train(GaussianPatches(4, 1.0), _gauss_config(), NetworkArch(5, (4,), 4))


def test_config_validation():
    with pytest.raises(InvalidArgument):
        TrainConfig(ema_rate=1.0)
    with pytest.raises(InvalidArgument):
        TrainConfig(P_std=0.0)
    assert TrainConfig().steps == 6250


def test_train_log_csv(tmp_path):
    hist = [{"step": 0, "loss": 1.5, "lr": 1e-4, "ema_rate": 0.999}, {"step": 1, "loss": 0.25, "lr": 2e-4, "ema_rate": 0.999}]
    path = tmp_path / "log.csv"
    write_train_log(hist, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["step", "loss", "lr", "ema_rate"]
    assert float(rows[2][1]) == 0.25 and len(rows) == 3
    assert final_smoothed_loss(hist, fraction=0.5) == 0.25
