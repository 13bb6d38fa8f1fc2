"""EM-style improvement toward a prior: sample-based E-step with a
temperature dual, then trust-region weighted maximum likelihood.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import gaussian as G
from . import nn
from .errors import NonFiniteError

MIN_DUAL = 0.001


def _adam1(n=1):
    return nn.AdamState.zeros(n, learning_rate=2e-4)


@dataclass
class DualState:
    """Temperature and trust-region multipliers with their optimizer moments."""

    eta: float = 3.0
    alpha: float = 1.0
    alpha_mu: float = 1.0
    alpha_sigma: float = 1.0
    eta_opt: nn.AdamState = field(default_factory=_adam1)
    alpha_opt: nn.AdamState = field(default_factory=lambda: _adam1(3))

    def __post_init__(self):
        for name in ("eta", "alpha", "alpha_mu", "alpha_sigma"):
            if getattr(self, name) < MIN_DUAL:
                raise ValueError(f"{name} must be >= {MIN_DUAL}")


def nonparam_weights(q_values, eta: float) -> np.ndarray:
    """softmax(q / eta) over the last (sample) axis."""
    z = np.asarray(q_values, dtype=np.float64) / eta
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def kl_to_uniform(weights) -> np.ndarray:
    """KL(weights || uniform over the samples), per state."""
    w = np.asarray(weights, dtype=np.float64)
    m = w.shape[-1]
    safe = np.where(w > 0, w, 1.0)
    return np.sum(np.where(w > 0, w * np.log(m * safe), 0.0), axis=-1)


def dual_value_and_grad(q_samples, eta: float, epsilon: float) -> tuple[float, float]:
    """Sampled temperature dual and its derivative.

    g(eta) = eta*eps + eta * mean_s log( mean_j exp(q_sj / eta) )
    """
    q = np.atleast_2d(np.asarray(q_samples, dtype=np.float64))
    z = q / eta
    zc = z - z.max(axis=-1, keepdims=True)
    lme_c = np.log(np.mean(np.exp(zc), axis=-1))
    lme = lme_c + z.max(axis=-1)
    w = nonparam_weights(q, eta)
    g = eta * epsilon + eta * float(np.mean(lme))
    dg = epsilon + float(np.mean(lme_c - np.sum(w * zc, axis=-1)))
    return g, dg


def trust_kl(policy_old: nn.ParamSet, policy: nn.ParamSet, observations) -> np.ndarray:
    """KL(pi_old || pi) per state."""
    return G.kl(G.make_head(nn.forward(policy_old, observations)), G.make_head(nn.forward(policy, observations)))


def mpo_policy_loss_and_grad(observations, prior_actions, weights, dual: DualState, policy: nn.ParamSet,
                             policy_old: nn.ParamSet, eps_trust: float = 0.1, decoupled: bool = False,
                             eps_mu: float = 5e-3, eps_sigma: float = 1e-5):
    """Weighted log-likelihood of prior samples plus the trust-region Lagrangian.

    ``observations`` ``(S, o)``, ``prior_actions`` ``(S, M, a)``, ``weights``
    ``(S, M)`` from :func:`nonparam_weights`. The loss is
    ``-mean_s sum_j w_sj log pi(a_sj|s) - alpha * (eps_trust - mean_s KL(pi_old || pi))``.
    Returns ``(loss, grad_theta, grad_alpha)`` where ``grad_alpha`` is the
    loss derivative w.r.t. the multiplier(s): a float, or ``[d/d alpha_mu,
    d/d alpha_sigma]`` when ``decoupled``.
    """
    obs = np.asarray(observations, dtype=np.float64)
    acts = np.asarray(prior_actions, dtype=np.float64)
    w = np.asarray(weights, dtype=np.float64)
    S = obs.shape[0]
    head, raw, trace = G.head_forward(policy, obs)
    old = G.make_head(nn.forward(policy_old, obs))
    bh = G.GaussianHead(head.mean[:, None, :], head.std[:, None, :])
    lp = G.log_prob(bh, acts)
    ll = float(np.sum(w * lp)) / S
    dm_lp, ds_lp = G.log_prob_grads(bh, acts)
    d_mean = -np.sum(w[..., None] * dm_lp, axis=1) / S
    d_std = -np.sum(w[..., None] * ds_lp, axis=1) / S

    if decoupled:
        kl_m, kl_s = G.kl_decoupled(old, head)
        mkl_m, mkl_s = float(np.mean(kl_m)), float(np.mean(kl_s))
        loss = -ll - dual.alpha_mu * (eps_mu - mkl_m) - dual.alpha_sigma * (eps_sigma - mkl_s)
        g_qm, g_qs = G.kl_decoupled_grads(old, head)
        d_mean = d_mean + dual.alpha_mu * g_qm / S
        d_std = d_std + dual.alpha_sigma * g_qs / S
        grad_alpha = np.array([mkl_m - eps_mu, mkl_s - eps_sigma])
        finite = np.isfinite(mkl_m) and np.isfinite(mkl_s)
    else:
        kl = G.kl(old, head)
        mkl = float(np.mean(kl))
        loss = -ll - dual.alpha * (eps_trust - mkl)
        _, _, g_qm, g_qs = G.kl_grads(old, head)
        d_mean = d_mean + dual.alpha * g_qm / S
        d_std = d_std + dual.alpha * g_qs / S
        grad_alpha = mkl - eps_trust
        finite = np.isfinite(mkl)
    if not finite or not np.isfinite(loss):
        raise NonFiniteError(f"MPO policy loss is {loss} (trust KL finite: {finite})")
    grad = G.head_backward(policy, obs, raw, trace, d_mean, d_std)
    return loss, grad, grad_alpha


def _project(x) -> float:
    return max(float(x), MIN_DUAL)


def eta_step(dual: DualState, grad: float, lr: float | None = None) -> DualState:
    """One Adam descent step on eta, then project to >= MIN_DUAL."""
    opt = dual.eta_opt if lr is None else replace(dual.eta_opt, learning_rate=lr)
    new, opt = nn.adam_update(opt, np.array([dual.eta]), np.array([grad], dtype=np.float64))
    return replace(dual, eta=_project(new[0]), eta_opt=opt)


def alpha_step(dual: DualState, grad_alpha, lr: float | None = None) -> DualState:
    """Raise the multiplier(s) when the trust region is violated, lower them when slack.

    ``grad_alpha`` is the loss derivative returned by
    :func:`mpo_policy_loss_and_grad`; the multiplier ascends it.
    """
    opt = dual.alpha_opt if lr is None else replace(dual.alpha_opt, learning_rate=lr)
    ga = np.atleast_1d(np.asarray(grad_alpha, dtype=np.float64))
    full = np.zeros(3)
    if ga.size == 1:
        full[0] = ga[0]
    elif ga.size == 2:
        full[1:] = ga
    else:
        raise ValueError("grad_alpha must have one or two entries")
    vals = np.array([dual.alpha, dual.alpha_mu, dual.alpha_sigma])
    # unused multipliers keep zero moments, so Adam leaves them in place
    new, opt = nn.adam_update(opt, vals, -full)
    return replace(dual, alpha=_project(new[0]), alpha_mu=_project(new[1]),
                   alpha_sigma=_project(new[2]), alpha_opt=opt)
