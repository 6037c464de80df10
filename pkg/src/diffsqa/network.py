"""Raw denoiser network: an MLP over flattened feature patches.

The noise level enters through fixed log-spaced Fourier features concatenated to
the input.  Forward pass, input VJP and parameter gradients are written by hand
so the likelihood engine gets exact reverse-mode derivatives.

All functions accept a single vector ``(in_dim,)`` or a batch ``(B, in_dim)``;
``c_noise`` may be a scalar or one value per row.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from .errors import InvalidArgument
from .numerics import SeededRng


@dataclass(frozen=True)
class NetworkArch:
    in_dim: int
    hidden_dims: tuple[int, ...] = (512, 512, 512)
    embed_dim: int = 64

    def __post_init__(self):
        object.__setattr__(self, "hidden_dims", tuple(int(h) for h in self.hidden_dims))
        if self.in_dim < 1 or any(h < 1 for h in self.hidden_dims):
            raise InvalidArgument(f"layer widths must be >= 1: {self}")
        if self.embed_dim < 2 or self.embed_dim % 2:
            raise InvalidArgument(f"embed_dim must be even and >= 2, got {self.embed_dim}")

    def layer_shapes(self) -> list[tuple[int, int]]:
        dims = [self.in_dim + self.embed_dim, *self.hidden_dims, self.in_dim]
        return [(dims[i + 1], dims[i]) for i in range(len(dims) - 1)]


@dataclass
class DenoiserParams:
    arch: NetworkArch
    weights: list[tuple[np.ndarray, np.ndarray]]
    sigma_data: float = 0.5
    feature_mean: float = 0.0
    feature_std: float = 1.0
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        shapes = self.arch.layer_shapes()
        if len(shapes) != len(self.weights):
            raise InvalidArgument(f"expected {len(shapes)} layers, got {len(self.weights)}")
        for (w, b), shape in zip(self.weights, shapes):
            if w.shape != shape or b.shape != (shape[0],):
                raise InvalidArgument(f"layer shape {w.shape}/{b.shape} does not match {shape}")
        if self.sigma_data <= 0 or self.feature_std <= 0:
            raise InvalidArgument("sigma_data and feature_std must be positive")

    def copy_with(self, weights) -> "DenoiserParams":
        return DenoiserParams(self.arch, weights, self.sigma_data, self.feature_mean,
                              self.feature_std, dict(self.extra))

    @property
    def num_parameters(self) -> int:
        return sum(w.size + b.size for w, b in self.weights)


def init_params(arch: NetworkArch, rng: SeededRng, sigma_data: float = 0.5) -> DenoiserParams:
    """He-uniform weights (bound sqrt(6 / fan_in)), zero biases."""
    weights = []
    for fan_out, fan_in in arch.layer_shapes():
        bound = np.sqrt(6.0 / fan_in)
        w = (2.0 * rng.uniform(fan_out * fan_in) - 1.0) * bound
        weights.append((w.reshape(fan_out, fan_in), np.zeros(fan_out)))
    return DenoiserParams(arch, weights, sigma_data=sigma_data)


def embedding_frequencies(embed_dim: int) -> np.ndarray:
    return np.logspace(0.0, 3.0, embed_dim // 2)


def embed_noise(c_noise, embed_dim: int) -> np.ndarray:
    """``[sin(2 pi f_k u), cos(2 pi f_k u)]`` with f_k log-spaced in [1, 1000]."""
    if embed_dim < 2 or embed_dim % 2:
        raise InvalidArgument(f"embed_dim must be even and >= 2, got {embed_dim}")
    u = np.asarray(c_noise, dtype=np.float64)
    phase = 2.0 * np.pi * u[..., None] * embedding_frequencies(embed_dim)
    return np.concatenate([np.sin(phase), np.cos(phase)], axis=-1)


def _as_batch(params: DenoiserParams, x, c_noise):
    x = np.ascontiguousarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != params.arch.in_dim:
        raise InvalidArgument(f"input shape {x.shape} does not match in_dim={params.arch.in_dim}")
    c = np.broadcast_to(np.asarray(c_noise, dtype=np.float64), (xb.shape[0],))
    return xb, c, single


def _silu_grad(a: np.ndarray) -> np.ndarray:
    s = expit(a)
    return s * (1.0 + a * (1.0 - s))


def _forward_cached(params: DenoiserParams, xb: np.ndarray, c: np.ndarray):
    z = np.concatenate([xb, embed_noise(c, params.arch.embed_dim)], axis=1)
    inputs, pre = [z], []
    for w, b in params.weights[:-1]:
        a = z @ w.T + b
        z = a * expit(a)
        pre.append(a)
        inputs.append(z)
    w, b = params.weights[-1]
    return z @ w.T + b, inputs, pre


def forward(params: DenoiserParams, x, c_noise) -> np.ndarray:
    xb, c, single = _as_batch(params, x, c_noise)
    out = _forward_cached(params, xb, c)[0]
    return out[0] if single else out


def _check_upstream(v, shape):
    v = np.asarray(v, dtype=np.float64)
    vb = v[None, :] if v.ndim == 1 else v
    if vb.shape != shape:
        raise InvalidArgument(f"cotangent shape {v.shape} does not match output {shape}")
    # broadcast (zero-stride) operands drop matmul off the BLAS path
    return np.ascontiguousarray(vb)


def vjp_input(params: DenoiserParams, x, c_noise, v) -> np.ndarray:
    """``v^T dF/dx`` by reverse-mode differentiation of :func:`forward`."""
    return forward_and_vjp(params, x, c_noise, v)[1]


def forward_and_vjp(params: DenoiserParams, x, c_noise, v):
    """Forward output and input VJP sharing one forward pass."""
    xb, c, single = _as_batch(params, x, c_noise)
    g = _check_upstream(v, xb.shape)
    out, _, pre = _forward_cached(params, xb, c)
    n = len(params.weights)
    for i in range(n - 1, -1, -1):
        if i < n - 1:
            g = g * _silu_grad(pre[i])
        g = g @ params.weights[i][0]
    g = g[:, : params.arch.in_dim]
    return (out[0], g[0]) if single else (out, g)


def grad_params(params: DenoiserParams, x, c_noise, upstream) -> list[tuple[np.ndarray, np.ndarray]]:
    """Gradients of ``sum(upstream * F(x))`` w.r.t. every weight and bias (summed over the batch)."""
    xb, c, _ = _as_batch(params, x, c_noise)
    g = _check_upstream(upstream, xb.shape)
    _, inputs, pre = _forward_cached(params, xb, c)
    grads = []
    n = len(params.weights)
    for i in range(n - 1, -1, -1):
        w = params.weights[i][0]
        if i < n - 1:
            g = g * _silu_grad(pre[i])
        grads.append((g.T @ inputs[i], g.sum(axis=0)))
        if i > 0:
            g = g @ w
    return grads[::-1]
