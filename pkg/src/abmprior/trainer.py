"""Offline learner loop: prior, critic, policy and dual updates from a frozen dataset."""
from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np

from . import gaussian as G
from . import mpo, nn, priors, svg
from .config import TrainConfig, save_config
from .dataset import SnippetBatch, TransitionArrays, condition, read_dataset_arrays
from .envs import PointMassEnv, make_env
from .errors import NonFiniteError
from .policy_eval import CriticPair, estimate_value, maybe_sync, q_values, td_loss_and_grad

log = logging.getLogger(__name__)


class TrainingAborted(RuntimeError):
    def __init__(self, step: int, reason: str):
        super().__init__(f"training aborted at step {step}: {reason}")
        self.step = step
        self.reason = reason


@dataclass
class MetricsRow:
    step: int
    td_loss: float
    prior_loss: float
    policy_objective: float
    eta: float
    alpha: float
    mean_kl_policy_prior: float
    weight_fraction: float
    eval_return_mean: float
    eval_return_std: float


METRIC_FIELDS = tuple(f.name for f in fields(MetricsRow))


@dataclass
class LearnerState:
    policy: nn.ParamSet
    policy_target: nn.ParamSet
    prior: nn.ParamSet
    prior_target: nn.ParamSet
    critics: CriticPair
    dual: mpo.DualState
    opt_policy: nn.AdamState
    opt_prior: nn.AdamState
    opt_critic: nn.AdamState
    step: int = 0

    def copy(self) -> "LearnerState":
        return LearnerState(
            self.policy.copy(), self.policy_target.copy(), self.prior.copy(), self.prior_target.copy(),
            CriticPair(self.critics.online.copy(), self.critics.target.copy(), self.critics.steps_since_sync),
            self.dual, self.opt_policy.copy(), self.opt_prior.copy(), self.opt_critic.copy(), self.step,
        )

    def deployed(self, config: TrainConfig) -> nn.ParamSet:
        """The network that acts in the environment."""
        return self.prior if config.prior_only else self.policy


@dataclass
class TrainResult:
    state: LearnerState
    metrics: list[MetricsRow] = field(default_factory=list)
    out_dir: Path | None = None


def init_learner(config: TrainConfig, obs_in: int, action_dim: int) -> LearnerState:
    rng = np.random.default_rng([config.seed, 0])
    head_out = 2 * action_dim
    policy = nn.init_params(nn.Architecture(obs_in, config.policy_widths, head_out), rng)
    prior = nn.init_params(nn.Architecture(obs_in, config.prior_widths, head_out), rng)
    critic = nn.init_params(nn.Architecture(obs_in + action_dim, config.critic_widths, 1), rng)
    lr = config.learning_rate
    dual = mpo.DualState(
        eta=config.resolved_eta_init, alpha=config.alpha_init,
        alpha_mu=config.alpha_init, alpha_sigma=config.alpha_init,
        eta_opt=nn.AdamState.zeros(1, config.dual_learning_rate),
        alpha_opt=nn.AdamState.zeros(3, config.dual_learning_rate),
    )
    return LearnerState(
        policy=policy, policy_target=policy.copy(), prior=prior, prior_target=prior.copy(),
        critics=CriticPair.create(critic), dual=dual,
        opt_policy=nn.AdamState.zeros(policy.arch.n_params, lr),
        opt_prior=nn.AdamState.zeros(prior.arch.n_params, lr),
        opt_critic=nn.AdamState.zeros(critic.arch.n_params, lr),
    )


def _check(name: str, value) -> None:
    if not np.all(np.isfinite(value)):
        raise NonFiniteError(f"{name} is not finite")


def learner_step(state: LearnerState, data: TransitionArrays, config: TrainConfig, rng: np.random.Generator,
                 task_index: int) -> tuple[LearnerState, dict]:
    """One learner step: every gradient is computed from
    the pre-step parameters, then all are applied together."""
    N, M, gamma = config.snippet_len, config.M, config.gamma
    eps = config.resolved_epsilon
    idx = data.sample_snippet_indices(rng, config.batch_size, N)
    batch = SnippetBatch.from_arrays(data, idx, task_index)
    evaluated = state.prior_target if config.prior_only else state.policy_target

    # V at s_1..s_N plus the successor of the last step; consecutive snippet
    # steps are chained, so column t+1 is V(next_observation_t).
    states = np.concatenate([batch.observations, batch.next_observations[:, -1:]], axis=1)
    values = estimate_value(state.critics.target, evaluated, states, M, rng)
    info = {"weight_fraction": float("nan"), "prior_loss": float("nan"),
            "policy_objective": float("nan")}

    g_prior = None
    if config.prior_kind == "abm":
        _, w = priors.advantage_weight_array(batch, state.critics, evaluated, gamma, M, rng,
                                             values=values[:, :N])
        info["weight_fraction"] = float(w.mean())
        info["prior_loss"], g_prior = priors.abm_loss_and_grad(batch, w, state.prior)
    elif config.prior_kind == "bm":
        info["weight_fraction"] = 1.0
        info["prior_loss"], g_prior = priors.bm_loss_and_grad(batch, state.prior)

    info["td_loss"], g_critic = td_loss_and_grad(batch, state.critics, evaluated, gamma, M, rng,
                                                 v_next=values[:, 1:])

    dual = state.dual
    g_policy = None
    if not config.prior_only:
        obs = batch.observations.reshape(-1, batch.observations.shape[-1])
        has_prior = config.prior_kind != "none"
        if config.algorithm == "mpo":
            source = state.prior if has_prior else state.policy_target
            acts = G.sample(G.make_head(nn.forward(source, obs)), rng, M)
            q = q_values(state.critics.target, obs[:, None, :], acts)
            _, dg = mpo.dual_value_and_grad(q, dual.eta, eps)
            weights = mpo.nonparam_weights(q, dual.eta)
            loss, g_policy, g_alpha = mpo.mpo_policy_loss_and_grad(
                obs, acts, weights, dual, state.policy, state.policy_target,
                eps_trust=config.eps_trust, decoupled=config.trust_region == "decoupled",
                eps_mu=config.eps_mu, eps_sigma=config.eps_sigma)
            info["policy_objective"] = -loss
            dual = mpo.eta_step(dual, dg)
            dual = mpo.alpha_step(dual, g_alpha)
        else:
            prior = state.prior if has_prior else None
            objective, g_obj = svg.svg_policy_loss_and_grad(obs, state.policy, prior, state.critics.target,
                                                            dual.eta, eps, M, rng)
            info["policy_objective"] = objective
            g_policy = -g_obj
            if has_prior:
                dual = mpo.eta_step(dual, svg.svg_eta_grad(obs, state.policy, state.prior, eps))
        _check("policy gradient", g_policy)

    _check("critic gradient", g_critic)
    critic, opt_critic = nn.adam_step(state.opt_critic, state.critics.online, g_critic)
    prior, opt_prior = state.prior, state.opt_prior
    if g_prior is not None:
        _check("prior gradient", g_prior)
        prior, opt_prior = nn.adam_step(opt_prior, prior, g_prior)
    policy, opt_policy = state.policy, state.opt_policy
    if g_policy is not None:
        policy, opt_policy = nn.adam_step(opt_policy, policy, g_policy)

    critics = maybe_sync(CriticPair(critic, state.critics.target, state.critics.steps_since_sync),
                         config.target_period)
    policy_target, prior_target = state.policy_target, state.prior_target
    if critics.steps_since_sync == 0:
        policy_target, prior_target = policy.copy(), prior.copy()
    new = LearnerState(policy, policy_target, prior, prior_target, critics, dual,
                       opt_policy, opt_prior, opt_critic, state.step + 1)
    return new, info


def policy_prior_kl(state: LearnerState, data: TransitionArrays, config: TrainConfig, task_index: int,
                    n_states: int = 512) -> float:
    """Mean KL(pi || prior) over a fixed, evenly spaced subset of dataset states."""
    if config.prior_kind == "none":
        return float("nan")
    sel = np.linspace(0, len(data) - 1, min(n_states, len(data))).astype(int)
    obs = condition(data.observations[sel], task_index, len(data.header.task_ids))
    pol = state.prior if config.prior_only else state.policy
    return float(np.mean(G.kl(G.make_head(nn.forward(pol, obs)), G.make_head(nn.forward(state.prior, obs)))))


def evaluate(policy: nn.ParamSet | str | Path, env: PointMassEnv, n_episodes: int, seed: int, task_id: str,
             task_ids=None, episode_len: int | None = None) -> dict:
    """Run the policy mean for ``n_episodes`` and summarise undiscounted returns."""
    if not isinstance(policy, nn.ParamSet):
        policy = nn.load_params(policy)
    task_ids = tuple(env.task_ids if task_ids is None else task_ids)
    if task_id not in task_ids:
        raise ValueError(f"task {task_id!r} is not among the checkpoint's tasks {list(task_ids)}")
    k = task_ids.index(task_id)
    if policy.arch.input_dim != env.observation_dim + len(task_ids) or policy.arch.output_dim != 2 * env.action_dim:
        raise ValueError(
            f"checkpoint shape (in={policy.arch.input_dim}, out={policy.arch.output_dim}) does not match "
            f"environment {env.name!r} with {len(task_ids)} tasks"
        )
    episode_len = env.episode_length if episode_len is None else episode_len
    rng = np.random.default_rng(seed)
    state = env.reset_batch(rng, n_episodes)
    task = env.task(task_id)
    returns = np.zeros(n_episodes)
    o = env.observe(state)
    for _ in range(episode_len):
        a = G.make_head(nn.forward(policy, condition(o, k, len(task_ids)))).mean
        state, o = env.step(state, a)
        returns += task.reward(o)
    return {
        "mean": float(returns.mean()), "std": float(returns.std()),
        "min": float(returns.min()), "max": float(returns.max()), "returns": returns.tolist(),
    }


def _fmt(x) -> str:
    return repr(float(x)) if isinstance(x, (float, np.floating)) else str(x)


def metrics_csv(rows: list[MetricsRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRIC_FIELDS)
    for r in rows:
        w.writerow([_fmt(getattr(r, f)) for f in METRIC_FIELDS])
    return buf.getvalue()


def save_checkpoints(out_dir, state: LearnerState, config: TrainConfig, task_ids) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    nn.save_params(out / "policy.ckpt", state.deployed(config))
    nn.save_params(out / "prior.ckpt", state.prior)
    nn.save_params(out / "critic_online.ckpt", state.critics.online)
    nn.save_params(out / "critic_target.ckpt", state.critics.target)
    d = state.dual
    (out / "dual.txt").write_text(
        f"eta {d.eta!r}\nalpha {d.alpha!r}\nalpha_mu {d.alpha_mu!r}\nalpha_sigma {d.alpha_sigma!r}\n"
    )
    (out / "meta.json").write_text(json.dumps({"task_ids": list(task_ids), "step": state.step}) + "\n")


def _load_data(config: TrainConfig, data) -> TransitionArrays:
    if data is not None:
        return data
    if config.dataset_path is None:
        raise ValueError("config.dataset_path is not set")
    p = Path(config.dataset_path)
    if not p.is_file():
        raise FileNotFoundError(f"dataset not found: {p}")
    return read_dataset_arrays(p)


def train(config: TrainConfig, data: TransitionArrays | None = None, progress=None) -> TrainResult:
    """Run ``config.total_steps`` learner steps on a fixed dataset."""
    data = _load_data(config, data)
    header = data.header
    env_name = config.env or header.environment_name
    env = make_env(env_name)
    if (env.observation_dim, env.action_dim) != (header.observation_dim, header.action_dim):
        raise ValueError(f"dataset dims do not match environment {env_name!r}")
    if not data.is_chained():
        raise ValueError("dataset next_observation does not chain into the following observation")
    task_ids = header.task_ids
    train_tasks = list(range(len(task_ids))) if config.multi_task else [header.task_index(config.task)]
    eval_task = header.task_index(config.task)
    if data.snippet_starts(config.snippet_len).size == 0:
        raise ValueError(f"dataset has no episode with {config.snippet_len} consecutive steps")

    state = init_learner(config, header.observation_dim + len(task_ids), header.action_dim)
    rng = np.random.default_rng([config.seed, 1])
    out = Path(config.out_dir) if config.out_dir else None
    rows: list[MetricsRow] = []
    acc: dict[str, list] = {}
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        save_config(out / "config.yaml", config)
        (out / "metrics.csv").write_text(metrics_csv(rows))

    for i in range(config.total_steps):
        task_index = train_tasks[i % len(train_tasks)]
        try:
            new_state, info = learner_step(state, data, config, rng, task_index)
        except NonFiniteError as exc:
            log.error("non-finite update at step %d: %s", state.step + 1, exc)
            if out is not None:
                save_checkpoints(out, state, config, task_ids)
            raise TrainingAborted(state.step + 1, str(exc)) from exc
        state = new_state
        for k, v in info.items():
            acc.setdefault(k, []).append(v)
        if state.step % config.eval_every == 0:
            ev = evaluate(state.deployed(config), env, config.eval_episodes, config.seed + 7919 * state.step,
                          config.task, task_ids, config.eval_episode_len)
            row = MetricsRow(
                step=state.step,
                td_loss=float(np.mean(acc["td_loss"])),
                prior_loss=float(np.mean(acc["prior_loss"])),
                policy_objective=float(np.mean(acc["policy_objective"])),
                eta=state.dual.eta, alpha=state.dual.alpha,
                mean_kl_policy_prior=policy_prior_kl(state, data, config, eval_task),
                weight_fraction=float(np.mean(acc["weight_fraction"])),
                eval_return_mean=ev["mean"], eval_return_std=ev["std"],
            )
            rows.append(row)
            acc = {}
            if progress is not None:
                progress(row)
            if out is not None:
                (out / "metrics.csv").write_text(metrics_csv(rows))
    if out is not None:
        save_checkpoints(out, state, config, task_ids)
    return TrainResult(state, rows, out)


def train_prior_only(config: TrainConfig, data: TransitionArrays | None = None, progress=None) -> TrainResult:
    """Prior and critic updates only; the prior is the deployed policy."""
    if config.prior_kind == "none":
        raise ValueError("train_prior_only needs prior_kind 'abm' or 'bm'")
    return train(config.updated(prior_only=True, epsilon=0.0), data, progress)
