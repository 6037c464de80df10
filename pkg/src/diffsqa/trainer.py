"""Denoising score matching for the preconditioned denoiser.

Noise levels are log-normal, ``ln sigma ~ N(P_mean, P_std^2)``, and each sample's
squared error is weighted by ``(sigma^2 + sigma_data^2) / (sigma * sigma_data)^2``
so the effective network target has unit variance.  Optimization is Adam with a
linear warmup; the returned parameters are an exponential moving average.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass

import numpy as np

from . import network
from .diffusion import precond_constants
from .errors import InvalidArgument
from .network import DenoiserParams, NetworkArch, init_params
from .numerics import SeededRng

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 32
    total_samples: int = 200_000
    lr: float = 1e-3
    warmup_steps: int = 1000
    ema_rate: float = 0.999
    P_mean: float = -1.2
    P_std: float = 1.2
    seed: int = 0
    sigma_data: float = 0.5
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.batch_size < 1 or self.total_samples < 1:
            raise InvalidArgument("batch_size and total_samples must be >= 1")
        if self.P_std <= 0:
            raise InvalidArgument(f"P_std must be positive, got {self.P_std}")
        if not 0 <= self.ema_rate < 1:
            raise InvalidArgument(f"ema_rate must be in [0, 1), got {self.ema_rate}")
        if self.lr <= 0 or self.sigma_data <= 0:
            raise InvalidArgument("lr and sigma_data must be positive")

    @property
    def steps(self) -> int:
        return max(1, self.total_samples // self.batch_size)


def loss_weight(sigma, sigma_data: float):
    sigma = np.asarray(sigma, dtype=np.float64)
    return (sigma**2 + sigma_data**2) / (sigma * sigma_data) ** 2


def sample_sigma(rng: SeededRng, P_mean: float = -1.2, P_std: float = 1.2, n: int | None = None):
    z = rng.normal(1 if n is None else n)
    sigma = np.exp(P_mean + P_std * z)
    return float(sigma[0]) if n is None else sigma


def _loss_and_grads(params: DenoiserParams, clean, sigma, noise, scale):
    """Sum over rows of ``scale * lambda * ||D(clean + noise) - clean||^2`` and its gradients."""
    c_in, c_out, c_skip, c_noise = precond_constants(sigma, params.sigma_data)
    col = lambda c: np.asarray(c).reshape(-1, 1)
    noisy = clean + noise
    net_in = col(c_in) * noisy
    f = network.forward(params, net_in, c_noise)
    resid = col(c_skip) * noisy + col(c_out) * f - clean
    lam = col(loss_weight(sigma, params.sigma_data))
    loss = float(np.sum(scale * lam * resid**2))
    upstream = 2.0 * scale * lam * col(c_out) * resid
    return loss, network.grad_params(params, net_in, c_noise, upstream)


def dsm_loss(params: DenoiserParams, clean_patch, sigma: float, noise):
    """Weighted denoising loss for one patch and its exact parameter gradients."""
    if sigma <= 0:
        raise InvalidArgument(f"sigma must be positive, got {sigma}")
    clean = np.asarray(clean_patch, dtype=np.float64).reshape(1, -1)
    noise = np.asarray(noise, dtype=np.float64).reshape(1, -1)
    return _loss_and_grads(params, clean, np.array([sigma]), noise, 1.0)


class Adam:
    def __init__(self, weights, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0):
        self.b1, self.b2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.m = [(np.zeros_like(w), np.zeros_like(b)) for w, b in weights]
        self.v = [(np.zeros_like(w), np.zeros_like(b)) for w, b in weights]
        self.t = 0

    def step(self, weights, grads, lr: float):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        out = []
        for layer, (pw, gw) in enumerate(zip(weights, grads)):
            new = []
            for k in range(2):
                p, g = pw[k], gw[k]
                if self.weight_decay:
                    g = g + self.weight_decay * p
                m = self.m[layer][k]
                v = self.v[layer][k]
                m *= self.b1
                m += (1 - self.b1) * g
                v *= self.b2
                v += (1 - self.b2) * g * g
                new.append(p - lr * (m / c1) / (np.sqrt(v / c2) + self.eps))
            out.append(tuple(new))
        return out


class ArrayPatches:
    """Rows of a fixed ``(count, dim)`` array, drawn uniformly with replacement."""

    def __init__(self, patches):
        self.patches = np.atleast_2d(np.asarray(patches, dtype=np.float64))
        if len(self.patches) == 0:
            raise InvalidArgument("empty patch array")
        self.dim = self.patches.shape[1]

    def sample(self, rng: SeededRng, count: int) -> np.ndarray:
        return self.patches[rng.integers(count, len(self.patches))]


class GaussianPatches:
    """Fresh i.i.d. N(0, std^2) vectors; the data for closed-form denoiser checks."""

    def __init__(self, dim: int, std: float):
        self.dim = dim
        self.std = std

    def sample(self, rng: SeededRng, count: int) -> np.ndarray:
        return self.std * rng.normal(count * self.dim).reshape(count, self.dim)


class SpectrogramPatches:
    """Random ``patch_frames``-wide crops of normalized spectrograms."""

    def __init__(self, specs, patch_frames: int):
        self.specs = [np.asarray(getattr(s, "values", s), dtype=np.float64) for s in specs]
        self.specs = [s for s in self.specs if s.shape[1] >= patch_frames]
        if not self.specs:
            raise InvalidArgument(f"no spectrogram with at least {patch_frames} frames")
        self.patch_frames = patch_frames
        self.n_mels = self.specs[0].shape[0]
        self.dim = self.n_mels * patch_frames

    def sample(self, rng: SeededRng, count: int) -> np.ndarray:
        which = rng.integers(count, len(self.specs))
        u = rng.uniform(count)
        out = np.empty((count, self.dim))
        for row, (k, r) in enumerate(zip(which, u)):
            s = self.specs[k]
            start = min(int(r * (s.shape[1] - self.patch_frames + 1)), s.shape[1] - self.patch_frames)
            out[row] = s[:, start:start + self.patch_frames].reshape(-1)
        return out


def train(dataset, config: TrainConfig, arch: NetworkArch | None = None,
          history: list | None = None, log_every: int = 100) -> DenoiserParams:
    """Train from ``dataset.sample(rng, count)`` batches and return the EMA parameters.

    If ``history`` is a list, one ``{step, loss, lr, ema_rate}`` row is appended per step.
    """
    if getattr(dataset, "dim", 0) < 1:
        raise InvalidArgument("dataset yields no patches")
    arch = arch or NetworkArch(in_dim=dataset.dim)
    if arch.in_dim != dataset.dim:
        raise InvalidArgument(f"network in_dim {arch.in_dim} != patch dimension {dataset.dim}")
    root = SeededRng(config.seed)
    params = init_params(arch, root.spawn(0), config.sigma_data)
    data_rng, noise_rng = root.spawn(1), root.spawn(2)
    weights = params.weights
    ema = [(w.copy(), b.copy()) for w, b in weights]
    opt = Adam(weights, config.betas, config.adam_eps, config.weight_decay)
    scale = 1.0 / (config.batch_size * arch.in_dim)
    smoothed = None
    for step in range(config.steps):
        clean = dataset.sample(data_rng, config.batch_size)
        sigma = sample_sigma(noise_rng, config.P_mean, config.P_std, config.batch_size)
        noise = sigma[:, None] * noise_rng.normal(clean.size).reshape(clean.shape)
        loss, grads = _loss_and_grads(params, clean, sigma, noise, scale)
        if not np.isfinite(loss):
            raise FloatingPointError(f"training loss became non-finite at step {step}")
        lr = config.lr * min(1.0, (step + 1) / max(1, config.warmup_steps))
        weights = opt.step(weights, grads, lr)
        params = params.copy_with(weights)
        r = config.ema_rate
        ema = [(r * ew + (1 - r) * w, r * eb + (1 - r) * b) for (ew, eb), (w, b) in zip(ema, weights)]
        smoothed = loss if smoothed is None else 0.99 * smoothed + 0.01 * loss
        if history is not None:
            history.append({"step": step, "loss": loss, "lr": lr, "ema_rate": r})
        if log_every and step % log_every == 0:
            log.info("step %d loss %.5f (smoothed %.5f) lr %.2e", step, loss, smoothed, lr)
    return params.copy_with(ema)


def write_train_log(history, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["step", "loss", "lr", "ema_rate"])
        for row in history:
            writer.writerow([row["step"], repr(row["loss"]), repr(row["lr"]), repr(row["ema_rate"])])


def final_smoothed_loss(history, fraction: float = 0.1) -> float:
    k = max(1, int(len(history) * fraction))
    return float(np.mean([row["loss"] for row in history[-k:]]))
