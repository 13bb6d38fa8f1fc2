"""Toy continuous-control environments with tolerance-shaped multi-task rewards.

The point-mass environments use velocity control: the action is a velocity
command, clipped to ``[-action_limit, action_limit]`` per axis, and the
position is integrated with step ``dt`` and clipped to the box. The
observation is the position.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dataset import DatasetHeader, TransitionArrays, write_dataset

_ATANH_SQRT95 = math.atanh(math.sqrt(0.95))


def stol(v, eps_tol: float, r_scale: float):
    """Shaped tolerance: 1 inside ``eps_tol``, else ``1 - tanh^2(atanh(sqrt(.95)) / r * |v|)``."""
    a = np.abs(v)
    shaped = 1.0 - np.tanh(_ATANH_SQRT95 / r_scale * a) ** 2
    out = np.where(a < eps_tol, 1.0, shaped)
    return float(out) if np.ndim(out) == 0 else out


def btol(v, eps_tol: float):
    """1 iff ``|v| < eps_tol``."""
    out = np.where(np.abs(v) < eps_tol, 1.0, 0.0)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True)
class TaskSpec:
    """A goal-reaching reward.

    ``shaped_stol``: stol(distance to goal).
    ``binary_btol``: btol(distance to goal).
    ``composite``: btol on the distance to ``gate_point`` measured along
    ``gate_axes``, times stol(distance to goal). The scripted controller
    visits the gate point first.
    """

    task_id: str
    goal: tuple[float, ...]
    reward_kind: str = "shaped_stol"
    eps_tol: float = 0.05
    r_scale: float = 0.5
    gate_point: tuple[float, ...] | None = None
    gate_axes: tuple[int, ...] = ()
    gate_tol: float = 0.1

    def __post_init__(self):
        if self.reward_kind not in ("shaped_stol", "binary_btol", "composite"):
            raise ValueError(f"unknown reward_kind {self.reward_kind!r}")
        if self.reward_kind == "composite" and self.gate_point is None:
            raise ValueError("composite tasks need a gate_point")

    def gate_value(self, position):
        pos = np.asarray(position, dtype=np.float64)
        axes = list(self.gate_axes) or list(range(pos.shape[-1]))
        d = np.linalg.norm(pos[..., axes] - np.asarray(self.gate_point)[axes], axis=-1)
        return btol(d, self.gate_tol)

    def reward(self, position):
        """Reward at ``position``; vectorised over leading axes."""
        pos = np.asarray(position, dtype=np.float64)
        d = np.linalg.norm(pos - np.asarray(self.goal), axis=-1)
        if self.reward_kind == "shaped_stol":
            return stol(d, self.eps_tol, self.r_scale)
        if self.reward_kind == "binary_btol":
            return btol(d, self.eps_tol)
        return self.gate_value(pos) * stol(d, self.eps_tol, self.r_scale)

    def controller_target(self, position) -> np.ndarray:
        if self.reward_kind != "composite":
            return np.asarray(self.goal, dtype=np.float64)
        pos = np.asarray(position, dtype=np.float64)
        axes = list(self.gate_axes) or list(range(pos.size))
        d = np.linalg.norm(pos[axes] - np.asarray(self.gate_point)[axes])
        if d < 0.5 * self.gate_tol:
            return np.asarray(self.goal, dtype=np.float64)
        return np.asarray(self.gate_point, dtype=np.float64)


@dataclass
class EnvState:
    position: np.ndarray
    velocity: np.ndarray
    step_count: int = 0


@dataclass(frozen=True)
class PointMassEnv:
    name: str
    low: tuple[float, ...]
    high: tuple[float, ...]
    start_low: tuple[float, ...]
    start_high: tuple[float, ...]
    tasks: tuple[TaskSpec, ...]
    dt: float = 0.05
    episode_length: int = 200
    action_limit: float = 1.0

    def __post_init__(self):
        lo, hi = np.asarray(self.low), np.asarray(self.high)
        for t in self.tasks:
            g = np.asarray(t.goal)
            if g.shape != lo.shape or np.any(g < lo) or np.any(g > hi):
                raise ValueError(f"goal of task {t.task_id!r} lies outside the box")

    @property
    def observation_dim(self) -> int:
        return len(self.low)

    @property
    def action_dim(self) -> int:
        return len(self.low)

    @property
    def task_ids(self) -> tuple[str, ...]:
        return tuple(t.task_id for t in self.tasks)

    def task(self, task_id: str) -> TaskSpec:
        for t in self.tasks:
            if t.task_id == task_id:
                return t
        raise KeyError(f"environment {self.name!r} has no task {task_id!r}")

    def reset(self, rng: np.random.Generator) -> EnvState:
        pos = rng.uniform(self.start_low, self.start_high)
        return EnvState(pos, np.zeros(self.action_dim), 0)

    def reset_batch(self, rng: np.random.Generator, n: int) -> EnvState:
        """``n`` independent start states stacked along axis 0."""
        pos = rng.uniform(self.start_low, self.start_high, size=(n, self.observation_dim))
        return EnvState(pos, np.zeros((n, self.action_dim)), 0)

    def observe(self, state: EnvState) -> np.ndarray:
        return state.position.copy()

    def clip_action(self, action) -> np.ndarray:
        return np.clip(np.asarray(action, dtype=np.float64), -self.action_limit, self.action_limit)

    def step(self, state: EnvState, action) -> tuple[EnvState, np.ndarray]:
        vel = self.clip_action(action)
        pos = np.clip(state.position + vel * self.dt, self.low, self.high)
        new = EnvState(pos, vel, state.step_count + 1)
        return new, self.observe(new)

    def task_reward(self, observation, action, next_observation, task_id: str) -> float:
        """Reward of arriving at ``next_observation``; ``observation``/``action`` are unused."""
        return self.task(task_id).reward(next_observation)


def env_step(env: PointMassEnv, state: EnvState, action, dt: float | None = None):
    if dt is not None and dt != env.dt:
        env = replace(env, dt=dt)
    return env.step(state, action)


def task_reward(env: PointMassEnv, observation, action, next_observation, task_id: str) -> float:
    return env.task_reward(observation, action, next_observation, task_id)


def two_goal_point_mass(episode_length: int = 200) -> PointMassEnv:
    return PointMassEnv(
        name="two-goal-point-mass",
        low=(-1.0, -1.0), high=(1.0, 1.0),
        start_low=(-0.15, -0.15), start_high=(0.15, 0.15),
        tasks=(
            TaskSpec("reach-A", (0.7, 0.7), "shaped_stol", 0.05, 0.5),
            TaskSpec("reach-B", (-0.7, -0.7), "shaped_stol", 0.05, 0.5),
        ),
        episode_length=episode_length,
    )


def corridor_lift(episode_length: int = 200) -> PointMassEnv:
    """x runs along a corridor, z is height. ``lift`` only pays once the mass is at the lift's x."""
    return PointMassEnv(
        name="corridor-lift",
        low=(-1.0, 0.0), high=(1.0, 1.0),
        start_low=(-0.9, 0.0), start_high=(-0.7, 0.05),
        tasks=(
            TaskSpec("reach", (0.6, 0.0), "shaped_stol", 0.05, 0.5),
            TaskSpec("lift", (0.6, 0.6), "composite", 0.05, 0.5,
                     gate_point=(0.6, 0.0), gate_axes=(0,), gate_tol=0.1),
        ),
        episode_length=episode_length,
    )


ENVIRONMENTS = {
    "two-goal-point-mass": two_goal_point_mass,
    "corridor-lift": corridor_lift,
}


def make_env(name: str, episode_length: int = 200) -> PointMassEnv:
    try:
        return ENVIRONMENTS[name](episode_length)
    except KeyError:
        raise KeyError(f"unknown environment {name!r}; choose from {sorted(ENVIRONMENTS)}") from None


@dataclass(frozen=True)
class Persona:
    name: str
    target_task: str
    noise_std: float = 0.0
    competence: float = 1.0
    gain: float = 10.0

    def __post_init__(self):
        if self.noise_std < 0:
            raise ValueError("noise_std must be non-negative")
        if not 0.0 <= self.competence <= 1.0:
            raise ValueError("competence must lie in [0, 1]")


def scripted_policy(observation, persona: Persona, rng: np.random.Generator, env: PointMassEnv) -> np.ndarray:
    """Saturating proportional controller toward the persona's task, scaled by competence, plus noise."""
    pos = np.asarray(observation, dtype=np.float64)
    target = env.task(persona.target_task).controller_target(pos)
    a = persona.competence * np.clip(persona.gain * (target - pos), -env.action_limit, env.action_limit)
    if persona.noise_std > 0:
        a = a + persona.noise_std * rng.standard_normal(a.shape)
    return a


@dataclass
class GeneratedDataset:
    header: DatasetHeader
    data: TransitionArrays
    episode_personas: list[str] = field(default_factory=list)


def generate_dataset(env: PointMassEnv, personas: Sequence[Persona], weights: Sequence[float] | None,
                     n_episodes: int, episode_len: int | None = None, seed: int = 0,
                     path=None) -> GeneratedDataset:
    """Roll out personas (one sampled per episode) and record rewards for every task."""
    personas = list(personas)
    w = np.full(len(personas), 1.0 / len(personas)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (len(personas),) or abs(w.sum() - 1.0) > 1e-9 or np.any(w < 0):
        raise ValueError("persona weights must be non-negative and sum to 1")
    episode_len = env.episode_length if episode_len is None else episode_len
    rng = np.random.default_rng(seed)
    tasks = env.task_ids
    header = DatasetHeader(env.observation_dim, env.action_dim, tasks, env.name, seed)
    T = n_episodes * episode_len
    obs = np.empty((T, env.observation_dim))
    act = np.empty((T, env.action_dim))
    rew = np.empty((T, len(tasks)))
    nxt = np.empty((T, env.observation_dim))
    ep = np.repeat(np.arange(n_episodes), episode_len)
    st = np.tile(np.arange(episode_len), n_episodes)
    chosen = []
    i = 0
    for e in range(n_episodes):
        persona = personas[rng.choice(len(personas), p=w)]
        chosen.append(persona.name)
        state = env.reset(rng)
        o = env.observe(state)
        for _ in range(episode_len):
            a = env.clip_action(scripted_policy(o, persona, rng, env))
            state, o2 = env.step(state, a)
            obs[i], act[i], nxt[i] = o, a, o2
            rew[i] = [env.task_reward(o, a, o2, k) for k in tasks]
            o = o2
            i += 1
    data = TransitionArrays(header, obs, act, rew, nxt, np.zeros(T, dtype=bool), ep, st)
    if path is not None:
        write_dataset(path, header, data)
    return GeneratedDataset(header, data, chosen)


def rollout_return(env: PointMassEnv, act_fn, task_id: str, rng: np.random.Generator,
                   episode_len: int | None = None, state: EnvState | None = None) -> float:
    """Undiscounted return of one episode under ``act_fn(observation) -> action``."""
    episode_len = env.episode_length if episode_len is None else episode_len
    state = env.reset(rng) if state is None else state
    o = env.observe(state)
    total = 0.0
    for _ in range(episode_len):
        a = act_fn(o)
        state, o2 = env.step(state, a)
        total += env.task_reward(o, a, o2, task_id)
        o = o2
    return total


@dataclass(frozen=True)
class FiniteMDP:
    """Tabular MDP exposed through one-hot observations and a scalar action.

    Action ``k`` is encoded as the scalar ``action_values[k]``. Used to check
    fitted policy evaluation against exact dynamic programming.
    """

    transition: np.ndarray  # (S, A, S)
    reward: np.ndarray  # (S, A)
    action_values: tuple[float, ...] = (-1.0, 1.0)

    @property
    def n_states(self) -> int:
        return self.reward.shape[0]

    @property
    def n_actions(self) -> int:
        return self.reward.shape[1]

    def observation(self, s) -> np.ndarray:
        return np.eye(self.n_states)[s]

    def exact_q(self, policy_probs, gamma: float) -> np.ndarray:
        """Solve Q = r + gamma * P V, V = sum_a pi(a|s) Q(s, a)."""
        S, A = self.reward.shape
        pi = np.asarray(policy_probs, dtype=np.float64)
        p_pi = np.einsum("sat,tb->satb", self.transition, pi).reshape(S * A, S * A)
        return np.linalg.solve(np.eye(S * A) - gamma * p_pi, self.reward.ravel()).reshape(S, A)

    def sample_transitions(self, behavior_probs, n: int, rng: np.random.Generator):
        """(s, a, r, s') index arrays with states drawn uniformly and actions from the behavior."""
        s = rng.integers(0, self.n_states, size=n)
        cum = np.cumsum(np.asarray(behavior_probs)[s], axis=1)
        a = (rng.random((n, 1)) > cum).sum(axis=1)
        cum_t = np.cumsum(self.transition[s, a], axis=1)
        s2 = (rng.random((n, 1)) > cum_t).sum(axis=1)
        return s, a, self.reward[s, a], s2
