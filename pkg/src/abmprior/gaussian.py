"""Diagonal Gaussian action heads on top of :mod:`abmprior.nn` outputs.

A network with ``2 * action_dim`` outputs is read as ``[mean, h]`` and the
standard deviation is ``max(softplus(h), MIN_STD)``. All functions broadcast
over leading batch dimensions; the trailing axis is the action dimension.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

from . import nn
from .errors import DimensionError

MIN_VARIANCE = 0.01
MIN_STD = float(np.sqrt(MIN_VARIANCE))
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True, eq=False)
class GaussianHead:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        std = np.asarray(self.std, dtype=np.float64)
        if mean.shape != std.shape:
            raise DimensionError(f"mean {mean.shape} and std {std.shape} differ")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @property
    def action_dim(self) -> int:
        return self.mean.shape[-1]

    def __getitem__(self, idx) -> "GaussianHead":
        return GaussianHead(self.mean[idx], self.std[idx])


def softplus(h):
    return np.logaddexp(0.0, h)


def make_head(raw_output) -> GaussianHead:
    raw = np.asarray(raw_output, dtype=np.float64)
    if raw.shape[-1] % 2:
        raise DimensionError(f"raw head output needs an even trailing size, got {raw.shape}")
    a = raw.shape[-1] // 2
    return GaussianHead(raw[..., :a], np.maximum(softplus(raw[..., a:]), MIN_STD))


def raw_grad(raw_output, d_mean, d_std) -> np.ndarray:
    """Chain gradients w.r.t. (mean, std) back to the raw network output.

    The clamp at MIN_STD has zero gradient on the floor.
    """
    raw = np.asarray(raw_output, dtype=np.float64)
    a = raw.shape[-1] // 2
    h = raw[..., a:]
    dh = np.where(softplus(h) > MIN_STD, expit(h), 0.0) * d_std
    return np.concatenate([d_mean, dh], axis=-1)


def sample_reparam(head: GaussianHead, noise) -> np.ndarray:
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape[-1] != head.action_dim:
        raise DimensionError(f"noise {noise.shape} vs action_dim {head.action_dim}")
    return head.mean + head.std * noise


def sample(head: GaussianHead, rng: np.random.Generator, n: int | None = None) -> np.ndarray:
    """Draw actions; with ``n`` the samples axis is inserted before the action axis."""
    if n is None:
        return sample_reparam(head, rng.standard_normal(head.mean.shape))
    shape = head.mean.shape[:-1] + (n, head.action_dim)
    noise = rng.standard_normal(shape)
    return head.mean[..., None, :] + head.std[..., None, :] * noise


def log_prob(head: GaussianHead, action) -> np.ndarray:
    action = np.asarray(action, dtype=np.float64)
    if action.shape[-1] != head.action_dim:
        raise DimensionError(f"action {action.shape} vs action_dim {head.action_dim}")
    z = (action - head.mean) / head.std
    return -0.5 * np.sum(z * z + 2.0 * np.log(head.std) + LOG_2PI, axis=-1)


def log_prob_grads(head: GaussianHead, action) -> tuple[np.ndarray, np.ndarray]:
    """d log_prob / d mean and d log_prob / d std."""
    diff = np.asarray(action, dtype=np.float64) - head.mean
    var = head.std * head.std
    return diff / var, diff * diff / (var * head.std) - 1.0 / head.std


def kl(p: GaussianHead, q: GaussianHead) -> np.ndarray:
    """Closed-form KL(p || q) summed over action dimensions."""
    if p.mean.shape[-1] != q.mean.shape[-1]:
        raise DimensionError("heads have different action dimensions")
    dm = p.mean - q.mean
    terms = np.log(q.std / p.std) + (p.std**2 + dm * dm) / (2.0 * q.std**2) - 0.5
    return np.sum(terms, axis=-1)


def kl_grads(p: GaussianHead, q: GaussianHead):
    """Gradients of KL(p || q) w.r.t. (p.mean, p.std, q.mean, q.std)."""
    dm = p.mean - q.mean
    qv = q.std**2
    d_pm = dm / qv
    d_ps = -1.0 / p.std + p.std / qv
    d_qs = 1.0 / q.std - (p.std**2 + dm * dm) / (qv * q.std)
    return d_pm, d_ps, -d_pm, d_qs


def kl_decoupled(p: GaussianHead, q: GaussianHead) -> tuple[np.ndarray, np.ndarray]:
    """Split KL(p || q) into a mean part and a spread part.

    mean part:   KL(N(p.mean, p.std) || N(q.mean, p.std))  = sum dm^2 / (2 p.std^2)
    spread part: KL(N(p.mean, p.std) || N(p.mean, q.std))
    Used for the decoupled trust region, with ``p`` the frozen old policy.
    """
    dm = p.mean - q.mean
    kl_mean = np.sum(dm * dm / (2.0 * p.std**2), axis=-1)
    kl_std = np.sum(np.log(q.std / p.std) + p.std**2 / (2.0 * q.std**2) - 0.5, axis=-1)
    return kl_mean, kl_std


def kl_decoupled_grads(p: GaussianHead, q: GaussianHead):
    """Gradients of the two parts of :func:`kl_decoupled` w.r.t. (q.mean, q.std)."""
    dm = p.mean - q.mean
    d_mean_qm = -dm / p.std**2
    d_std_qs = 1.0 / q.std - p.std**2 / q.std**3
    return d_mean_qm, d_std_qs


def head_forward(params: nn.ParamSet, obs):
    """Run a policy-shaped network. Returns (head, raw_output, trace)."""
    raw, trace = nn.forward_trace(params, obs)
    return make_head(raw), raw, trace


def head_backward(params: nn.ParamSet, obs, raw, trace, d_mean, d_std) -> np.ndarray:
    """Parameter gradient given gradients on the head's mean and std."""
    draw = raw_grad(raw, d_mean, d_std)
    grad, _ = nn.backward(params, obs, draw, trace=trace)
    return grad
