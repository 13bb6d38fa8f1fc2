"""Desk-scale experiments: small datasets, small networks, a few thousand learner steps."""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .config import TrainConfig
from .dataset import TransitionArrays
from .envs import Persona, generate_dataset, rollout_return, scripted_policy, two_goal_point_mass
from .trainer import evaluate, train, train_prior_only

DESK = TrainConfig(
    batch_size=32, snippet_len=5, M=10, gamma=0.95,
    policy_widths=(32, 32), prior_widths=(32, 32), critic_widths=(64, 64),
    learning_rate=1e-3, dual_learning_rate=1e-2, target_period=100,
    total_steps=3000, eval_every=500, eval_episodes=5, task="reach-A",
)
FINAL_EPISODES = 20

EXPERT_A = Persona("expert-A", "reach-A")
EXPERT_B = Persona("expert-B", "reach-B")


@dataclass
class RunOutcome:
    label: str
    seed: int
    final_return: float
    seconds: float
    curve: list[float] = field(default_factory=list)


def final_return(params, seed: int, task: str = "reach-A", task_ids=None) -> float:
    env = two_goal_point_mass()
    return evaluate(params, env, FINAL_EPISODES, 10_000 + seed, task, task_ids)["mean"]


def expert_ceiling(persona: Persona = EXPERT_A, n_episodes: int = FINAL_EPISODES, seed: int = 0) -> float:
    """Mean reach-A return of the noiseless scripted expert."""
    env = two_goal_point_mass()
    rng = np.random.default_rng(seed)
    rets = [rollout_return(env, lambda o: env.clip_action(scripted_policy(o, persona, rng, env)), persona.target_task, rng)
            for _ in range(n_episodes)]
    return float(np.mean(rets))


def run(label: str, config: TrainConfig, data: TransitionArrays, prior_only: bool = False) -> RunOutcome:
    t0 = time.perf_counter()
    result = (train_prior_only if prior_only else train)(config, data)
    params = result.state.prior if prior_only else result.state.policy
    ret = final_return(params, config.seed, config.task, data.header.task_ids)
    return RunOutcome(label, config.seed, ret, time.perf_counter() - t0,
                      [r.eval_return_mean for r in result.metrics])


def conflicting_dataset(seed: int = 0, n_episodes: int = 40) -> TransitionArrays:
    """50/50 mixture of experts driving to opposite goals."""
    return generate_dataset(two_goal_point_mass(), [EXPERT_A, EXPERT_B], [0.5, 0.5], n_episodes, seed=seed).data


def single_expert_dataset(seed: int = 0, n_episodes: int = 40, noise_std: float = 0.0) -> TransitionArrays:
    p = Persona("expert-A", "reach-A", noise_std=noise_std)
    return generate_dataset(two_goal_point_mass(), [p], None, n_episodes, seed=seed).data


def weak_persona_dataset(seed: int = 0, n_episodes: int = 40) -> TransitionArrays:
    """Competence-0.6, noisy personas, all aiming at reach-A."""
    ps = [Persona("weak-1", "reach-A", noise_std=0.3, competence=0.6),
          Persona("weak-2", "reach-A", noise_std=0.5, competence=0.6)]
    return generate_dataset(two_goal_point_mass(), ps, None, n_episodes, seed=seed).data


def conflicting_data(seed: int, base: TrainConfig = DESK) -> dict[str, RunOutcome]:
    """ABM+MPO, BM+MPO and MPO without a prior on the mixed dataset."""
    data = conflicting_dataset(seed)
    return {kind: run(f"{kind}+mpo", base.updated(prior_kind=kind, seed=seed), data)
            for kind in ("abm", "bm", "none")}


def epsilon_zero(seed: int, base: TrainConfig = DESK) -> dict[str, RunOutcome]:
    """Prior-only training with short and long snippets against full ABM+MPO, on single-expert data."""
    # heavy, clipped noise biases the behaviour mean, so the advantage filter has something to fix
    data = single_expert_dataset(seed, n_episodes=20, noise_std=2.0)
    return {
        "abm+mpo": run("abm+mpo", base.updated(seed=seed, snippet_len=2), data),
        "prior_only_n2": run("prior_only_n2", base.updated(seed=seed, snippet_len=2), data, prior_only=True),
        "prior_only_n10": run("prior_only_n10", base.updated(seed=seed, snippet_len=10), data, prior_only=True),
    }


def rl_over_prior(seed: int, base: TrainConfig = DESK) -> dict[str, float]:
    """Final ABM+MPO policy return against its own executed ABM prior."""
    data = weak_persona_dataset(seed)
    cfg = base.updated(seed=seed)
    result = train(cfg, data)
    ids = data.header.task_ids
    return {
        "policy": final_return(result.state.policy, seed, cfg.task, ids),
        "prior": final_return(result.state.prior, seed, cfg.task, ids),
    }
