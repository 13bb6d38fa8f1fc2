"""Fitted policy evaluation: TD(0) regression of Q onto r + gamma * V.

The critic is an :mod:`abmprior.nn` network on ``concat(observation, action)``
with a single output. ``V(s)`` is a Monte-Carlo average of the target critic
over ``M`` actions drawn from a policy head.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import gaussian as G
from . import nn
from .dataset import SnippetBatch
from .errors import NonFiniteError


@dataclass
class CriticPair:
    online: nn.ParamSet
    target: nn.ParamSet
    steps_since_sync: int = 0

    def __post_init__(self):
        if self.online.arch != self.target.arch:
            raise ValueError("online and target critics must share an architecture")

    @classmethod
    def create(cls, params: nn.ParamSet) -> "CriticPair":
        return cls(params, params.copy(), 0)


def q_values(critic: nn.ParamSet, observations, actions) -> np.ndarray:
    """Q for matching leading shapes of ``observations`` (..., o) and ``actions`` (..., a)."""
    obs = np.asarray(observations, dtype=np.float64)
    act = np.asarray(actions, dtype=np.float64)
    obs = np.broadcast_to(obs, act.shape[:-1] + obs.shape[-1:])
    lead = act.shape[:-1]
    x = np.concatenate([obs, act], axis=-1).reshape(-1, obs.shape[-1] + act.shape[-1])
    return nn.forward(critic, x)[:, 0].reshape(lead)


def q_action_grad(critic: nn.ParamSet, observations, actions, upstream) -> np.ndarray:
    """d(sum(upstream * Q)) / d action, same shape as ``actions``."""
    obs = np.asarray(observations, dtype=np.float64)
    act = np.asarray(actions, dtype=np.float64)
    obs = np.broadcast_to(obs, act.shape[:-1] + obs.shape[-1:])
    od = obs.shape[-1]
    x = np.concatenate([obs, act], axis=-1).reshape(-1, od + act.shape[-1])
    up = np.asarray(upstream, dtype=np.float64).reshape(-1, 1)
    _, dx = nn.backward(critic, x, up, need_param_grad=False)
    return dx[:, od:].reshape(act.shape)


def estimate_value(critic_target: nn.ParamSet, policy: nn.ParamSet, observations, M: int,
                   rng: np.random.Generator) -> np.ndarray:
    """Mean of the target critic over M actions sampled from ``policy``.

    ``observations`` is ``(o,)`` or ``(..., o)``; the result drops the last axis.
    """
    if M < 1:
        raise ValueError("M must be at least 1")
    obs = np.asarray(observations, dtype=np.float64)
    head = G.make_head(nn.forward(policy, obs.reshape(-1, obs.shape[-1])))
    actions = G.sample(head, rng, M)  # (S, M, a)
    q = q_values(critic_target, obs.reshape(-1, 1, obs.shape[-1]), actions)
    return q.mean(axis=-1).reshape(obs.shape[:-1])


def td_targets(batch: SnippetBatch, v_next, gamma: float) -> np.ndarray:
    return batch.rewards + gamma * np.where(batch.terminals, 0.0, v_next)


def td_loss_and_grad(batch: SnippetBatch, critics: CriticPair, policy: nn.ParamSet, gamma: float,
                     M: int, rng: np.random.Generator, v_next=None):
    """Mean squared TD error over every transition of the batch and its gradient.

    Targets come from the target critic; pass ``v_next`` ``(B, N)`` to reuse
    value estimates computed elsewhere.
    """
    if v_next is None:
        v_next = estimate_value(critics.target, policy, batch.next_observations, M, rng)
    targets = td_targets(batch, v_next, gamma)
    obs = batch.observations.reshape(-1, batch.observations.shape[-1])
    act = batch.actions.reshape(-1, batch.actions.shape[-1])
    x = np.concatenate([obs, act], axis=1)
    q, trace = nn.forward_trace(critics.online, x)
    err = q[:, 0] - targets.ravel()
    loss = float(np.mean(err * err))
    if not np.isfinite(loss):
        raise NonFiniteError(f"TD loss is {loss}")
    grad, _ = nn.backward(critics.online, x, (2.0 / err.size) * err[:, None], trace=trace)
    return loss, grad


def sync(critics: CriticPair) -> CriticPair:
    return CriticPair(critics.online, critics.online.copy(), 0)


def maybe_sync(critics: CriticPair, period: int) -> CriticPair:
    """Count one learner step; copy online into target when the count reaches ``period``."""
    count = critics.steps_since_sync + 1
    if count >= period:
        return sync(critics)
    return CriticPair(critics.online, critics.target, count)
