"""Behavior-model priors learned from the batch.

Both priors are fit on steps ``t = 1..N-1`` of each snippet (the steps that
have an n-step return), so the plain behavior model and the
advantage-weighted one see exactly the same state-action pairs.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import gaussian as G
from . import nn
from .dataset import SnippetBatch, nstep_returns
from .errors import NonFiniteError
from .policy_eval import CriticPair, estimate_value

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AdvantageWeight:
    snippet_index: int
    step_index: int
    advantage: float
    weight: int

    def __post_init__(self):
        if self.weight != int(self.advantage >= 0):
            raise ValueError("weight must be 1 exactly when advantage >= 0")


def _fit_steps(batch: SnippetBatch):
    obs = batch.observations[:, :-1]
    act = batch.actions[:, :-1]
    return obs.reshape(-1, obs.shape[-1]), act.reshape(-1, act.shape[-1])


def unit_step(x) -> np.ndarray:
    return (np.asarray(x) >= 0).astype(np.float64)


def advantages(batch: SnippetBatch, values, gamma: float) -> np.ndarray:
    """n-step advantages ``R(tau_{t:N}) - V(s_t)`` for t = 1..N-1.

    ``values`` is ``(B, N)``: value estimates at every snippet state, the
    last column serving as the bootstrap at ``s_N``.
    """
    values = np.asarray(values, dtype=np.float64)
    returns = nstep_returns(batch.rewards, batch.terminals, gamma, values[:, -1])
    return returns - values[:, :-1]


def advantage_weight_array(batch, critics: CriticPair, policy: nn.ParamSet, gamma: float, M: int,
                           rng: np.random.Generator, values=None) -> tuple[np.ndarray, np.ndarray]:
    """(advantages, weights), both ``(B, N-1)``."""
    if values is None:
        values = estimate_value(critics.target, policy, batch.observations, M, rng)
    adv = advantages(batch, values, gamma)
    return adv, unit_step(adv)


def abm_weights(batch, critics, policy, gamma, M, rng, values=None) -> list[AdvantageWeight]:
    adv, w = advantage_weight_array(batch, critics, policy, gamma, M, rng, values)
    return [
        AdvantageWeight(b, t + 1, float(adv[b, t]), int(w[b, t]))
        for b in range(adv.shape[0])
        for t in range(adv.shape[1])
    ]


def bm_loss_and_grad(batch: SnippetBatch, prior: nn.ParamSet):
    """Negative mean log-likelihood of the logged actions."""
    obs, act = _fit_steps(batch)
    head, raw, trace = G.head_forward(prior, obs)
    lp = G.log_prob(head, act)
    loss = -float(np.mean(lp))
    if not np.isfinite(loss):
        raise NonFiniteError(f"behavior-model loss is {loss}")
    dm, ds = G.log_prob_grads(head, act)
    scale = -1.0 / lp.size
    return loss, G.head_backward(prior, obs, raw, trace, scale * dm, scale * ds)


def abm_loss_and_grad(batch: SnippetBatch, weights, prior: nn.ParamSet):
    """Weighted negative log-likelihood, normalised by the number of weight-1 steps."""
    if isinstance(weights, (list, tuple)) and weights and isinstance(weights[0], AdvantageWeight):
        w = np.zeros((batch.batch_size, batch.length - 1))
        for aw in weights:
            w[aw.snippet_index, aw.step_index - 1] = aw.weight
    else:
        w = np.asarray(weights, dtype=np.float64)
    if w.shape != (batch.batch_size, batch.length - 1):
        raise ValueError(f"weights {w.shape} not aligned with batch {(batch.batch_size, batch.length - 1)}")
    w = w.ravel()
    count = float(np.sum(w))
    if count == 0.0:
        log.warning("all advantage weights are zero; prior receives no update")
        return 0.0, np.zeros(prior.arch.n_params)
    keep = w > 0
    obs, act = _fit_steps(batch)
    obs, act, w = obs[keep], act[keep], w[keep]
    head, raw, trace = G.head_forward(prior, obs)
    lp = G.log_prob(head, act)
    loss = -float(np.sum(w * lp) / count)
    if not np.isfinite(loss):
        raise NonFiniteError(f"advantage-weighted prior loss is {loss}")
    dm, ds = G.log_prob_grads(head, act)
    scale = (-w / count)[:, None]
    return loss, G.head_backward(prior, obs, raw, trace, scale * dm, scale * ds)
