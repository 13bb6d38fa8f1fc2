"""Stochastic value gradient improvement with a Lagrangian KL penalty toward the prior."""
from __future__ import annotations

import numpy as np

from . import gaussian as G
from . import nn
from .errors import NonFiniteError
from .policy_eval import q_action_grad, q_values


def svg_policy_loss_and_grad(observations, policy: nn.ParamSet, prior: nn.ParamSet | None,
                             critic: nn.ParamSet, eta: float, epsilon: float, M: int = 20,
                             rng: np.random.Generator | None = None, noise=None):
    """Objective ``mean_s [ mean_j Q(s, mu + std*xi_j) + eta*(eps - KL(pi || prior)) ]``
    and its gradient w.r.t. the policy parameters (ascent direction).

    ``noise`` ``(S, M, a)`` fixes the reparameterisation draws; otherwise they
    come from ``rng``. With ``prior=None`` the KL term is dropped. Prior and
    critic parameters are treated as constants.
    """
    obs = np.asarray(observations, dtype=np.float64)
    S = obs.shape[0]
    head, raw, trace = G.head_forward(policy, obs)
    if noise is None:
        if rng is None:
            raise ValueError("pass either noise or rng")
        noise = rng.standard_normal((S, M, head.action_dim))
    noise = np.asarray(noise, dtype=np.float64)
    M = noise.shape[1]
    actions = head.mean[:, None, :] + head.std[:, None, :] * noise
    q = q_values(critic, obs[:, None, :], actions)
    dq_da = q_action_grad(critic, obs[:, None, :], actions, np.full(q.shape, 1.0 / (S * M)))
    d_mean = dq_da.sum(axis=1)
    d_std = np.sum(dq_da * noise, axis=1)
    objective = float(np.mean(q))
    if prior is not None:
        pri = G.make_head(nn.forward(prior, obs))
        kl = G.kl(head, pri)
        objective += eta * (epsilon - float(np.mean(kl)))
        g_pm, g_ps, _, _ = G.kl_grads(head, pri)
        d_mean = d_mean - eta * g_pm / S
        d_std = d_std - eta * g_ps / S
    if not np.isfinite(objective):
        raise NonFiniteError(f"SVG objective is {objective}")
    return objective, G.head_backward(policy, obs, raw, trace, d_mean, d_std)


def svg_eta_grad(observations, policy: nn.ParamSet, prior: nn.ParamSet, epsilon: float) -> float:
    """d objective / d eta = mean_s (eps - KL(pi || prior)). Eta descends this."""
    obs = np.asarray(observations, dtype=np.float64)
    kl = G.kl(G.make_head(nn.forward(policy, obs)), G.make_head(nn.forward(prior, obs)))
    return float(epsilon - np.mean(kl))
