"""Logged transitions, snippet sampling, n-step returns and the dataset file format.

File layout: one JSON header line, then ``T`` fixed-width records of
little-endian float64 values::

    observation[obs_dim] action[act_dim] rewards[n_tasks]
    next_observation[obs_dim] terminal episode_id step_index

Transitions are stored in episode order, so a snippet is a run of
consecutive records sharing an ``episode_id``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DatasetFormatError, DimensionError, NonFiniteError


@dataclass(frozen=True)
class DatasetHeader:
    observation_dim: int
    action_dim: int
    task_ids: tuple[str, ...]
    environment_name: str = ""
    generator_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "task_ids", tuple(self.task_ids))
        if not self.task_ids or len(set(self.task_ids)) != len(self.task_ids):
            raise ValueError(f"task_ids must be non-empty and unique: {self.task_ids}")
        if self.observation_dim < 1 or self.action_dim < 1:
            raise ValueError("observation_dim and action_dim must be positive")

    @property
    def record_width(self) -> int:
        return 2 * self.observation_dim + self.action_dim + len(self.task_ids) + 3

    def task_index(self, task_id: str) -> int:
        try:
            return self.task_ids.index(task_id)
        except ValueError:
            raise KeyError(f"unknown task id {task_id!r}; dataset has {list(self.task_ids)}") from None

    def with_tasks(self, task_ids: Iterable[str]) -> "DatasetHeader":
        merged = list(self.task_ids) + [t for t in task_ids if t not in self.task_ids]
        return DatasetHeader(self.observation_dim, self.action_dim, tuple(merged),
                             self.environment_name, self.generator_seed)

    def to_json(self) -> str:
        return json.dumps({
            "observation_dim": self.observation_dim,
            "action_dim": self.action_dim,
            "task_ids": list(self.task_ids),
            "environment_name": self.environment_name,
            "generator_seed": self.generator_seed,
            "record_width": self.record_width,
        }, sort_keys=True)


@dataclass
class Transition:
    observation: np.ndarray
    action: np.ndarray
    rewards: dict[str, float]
    next_observation: np.ndarray
    terminal: bool = False
    episode_id: int = 0
    step_index: int = 0

    def __eq__(self, other):
        if not isinstance(other, Transition):
            return NotImplemented
        return (
            np.array_equal(self.observation, other.observation)
            and np.array_equal(self.action, other.action)
            and self.rewards == other.rewards
            and np.array_equal(self.next_observation, other.next_observation)
            and self.terminal == other.terminal
            and self.episode_id == other.episode_id
            and self.step_index == other.step_index
        )


@dataclass
class TrajectorySnippet:
    steps: list[Transition]
    source_task: str | None = None

    def __post_init__(self):
        if len(self.steps) < 2:
            raise ValueError("a snippet needs at least two steps")
        for a, b in zip(self.steps[:-1], self.steps[1:]):
            if a.episode_id != b.episode_id or b.step_index != a.step_index + 1:
                raise ValueError("snippet steps must be consecutive steps of one episode")

    def __len__(self):
        return len(self.steps)


@dataclass
class TransitionArrays:
    """Column-wise view of a dataset used by the trainer."""

    header: DatasetHeader
    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray  # (T, n_tasks), columns follow header.task_ids
    next_observations: np.ndarray
    terminals: np.ndarray
    episode_ids: np.ndarray
    step_indices: np.ndarray
    _starts: dict = field(default_factory=dict, repr=False)

    def __len__(self):
        return len(self.observations)

    @classmethod
    def from_transitions(cls, header: DatasetHeader, transitions: Sequence[Transition]) -> "TransitionArrays":
        return _records_to_arrays(header, _to_records(header, transitions))

    def to_transitions(self) -> list[Transition]:
        out = []
        for i in range(len(self)):
            out.append(Transition(
                observation=self.observations[i].copy(),
                action=self.actions[i].copy(),
                rewards={k: float(self.rewards[i, j]) for j, k in enumerate(self.header.task_ids)},
                next_observation=self.next_observations[i].copy(),
                terminal=bool(self.terminals[i]),
                episode_id=int(self.episode_ids[i]),
                step_index=int(self.step_indices[i]),
            ))
        return out

    def snippet_starts(self, length: int) -> np.ndarray:
        """Indices ``i`` such that records ``i .. i+length-1`` are one episode's consecutive steps."""
        if length < 2:
            raise ValueError("snippet length must be at least 2")
        if length not in self._starts:
            n = len(self) - length + 1
            if n <= 0:
                starts = np.zeros(0, dtype=np.int64)
            else:
                ep, st = self.episode_ids, self.step_indices
                ok = np.ones(n, dtype=bool)
                for k in range(1, length):
                    ok &= (ep[k:k + n] == ep[:n]) & (st[k:k + n] == st[:n] + k)
                starts = np.flatnonzero(ok)
            self._starts[length] = starts
        return self._starts[length]

    def sample_snippet_indices(self, rng: np.random.Generator, batch_size: int, length: int) -> np.ndarray:
        """(batch_size, length) record indices of uniformly drawn valid snippets."""
        starts = self.snippet_starts(length)
        if starts.size == 0:
            raise ValueError(f"no episode contains {length} consecutive steps")
        chosen = starts[rng.integers(0, starts.size, size=batch_size)]
        return chosen[:, None] + np.arange(length)[None, :]

    def is_chained(self) -> bool:
        """True when next_observation[i] equals observation[i+1] inside every episode."""
        same = (self.episode_ids[1:] == self.episode_ids[:-1]) & (self.step_indices[1:] == self.step_indices[:-1] + 1)
        return bool(np.array_equal(self.next_observations[:-1][same], self.observations[1:][same]))


def _to_records(header: DatasetHeader, transitions: Sequence[Transition]) -> np.ndarray:
    od, ad, tasks = header.observation_dim, header.action_dim, header.task_ids
    rec = np.empty((len(transitions), header.record_width), dtype=np.float64)
    for i, tr in enumerate(transitions):
        obs = np.asarray(tr.observation, dtype=np.float64)
        act = np.asarray(tr.action, dtype=np.float64)
        nxt = np.asarray(tr.next_observation, dtype=np.float64)
        if obs.shape != (od,) or nxt.shape != (od,) or act.shape != (ad,):
            raise DimensionError(
                f"transition {i} (episode {tr.episode_id}, step {tr.step_index}) does not match header dims"
            )
        extra = set(tr.rewards) - set(tasks)
        if extra:
            raise KeyError(f"transition {i} has unknown task ids {sorted(extra)}")
        try:
            rewards = [tr.rewards[k] for k in tasks]
        except KeyError as exc:
            raise KeyError(f"transition {i} is missing a reward for task {exc.args[0]!r}") from None
        rec[i] = np.concatenate([obs, act, rewards, nxt, [float(tr.terminal), tr.episode_id, tr.step_index]])
    if not np.all(np.isfinite(rec)):
        raise NonFiniteError("transitions contain non-finite values")
    return rec


def _records_to_arrays(header: DatasetHeader, rec: np.ndarray) -> TransitionArrays:
    od, ad, nt = header.observation_dim, header.action_dim, len(header.task_ids)
    c = np.cumsum([0, od, ad, nt, od, 1, 1, 1])
    return TransitionArrays(
        header=header,
        observations=rec[:, c[0]:c[1]].copy(),
        actions=rec[:, c[1]:c[2]].copy(),
        rewards=rec[:, c[2]:c[3]].copy(),
        next_observations=rec[:, c[3]:c[4]].copy(),
        terminals=rec[:, c[4]] != 0.0,
        episode_ids=rec[:, c[5]].astype(np.int64),
        step_indices=rec[:, c[6]].astype(np.int64),
    )


def _arrays_to_records(data: TransitionArrays) -> np.ndarray:
    return np.concatenate([
        data.observations, data.actions, data.rewards, data.next_observations,
        data.terminals[:, None].astype(np.float64),
        data.episode_ids[:, None].astype(np.float64),
        data.step_indices[:, None].astype(np.float64),
    ], axis=1)


def write_dataset(path, header: DatasetHeader, transitions) -> None:
    """Write a list of :class:`Transition` or a :class:`TransitionArrays`."""
    if isinstance(transitions, TransitionArrays):
        if transitions.header != header:
            raise ValueError("TransitionArrays header differs from the header being written")
        rec = _arrays_to_records(transitions)
    else:
        rec = _to_records(header, transitions)
    with open(path, "wb") as fh:
        fh.write(header.to_json().encode() + b"\n")
        fh.write(rec.astype("<f8").tobytes())


def read_dataset_arrays(path) -> TransitionArrays:
    raw = Path(path).read_bytes()
    head, sep, body = raw.partition(b"\n")
    if not sep:
        raise DatasetFormatError(f"{path}: missing header line")
    try:
        meta = json.loads(head)
        header = DatasetHeader(
            observation_dim=int(meta["observation_dim"]),
            action_dim=int(meta["action_dim"]),
            task_ids=tuple(meta["task_ids"]),
            environment_name=str(meta.get("environment_name", "")),
            generator_seed=int(meta.get("generator_seed", 0)),
        )
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetFormatError(f"{path}: bad header: {exc}") from None
    width = header.record_width
    if meta.get("record_width", width) != width:
        raise DatasetFormatError(f"{path}: record_width {meta['record_width']} does not match dims ({width})")
    if len(body) % (8 * width):
        raise DatasetFormatError(f"{path}: body of {len(body)} bytes is not a whole number of {width}-value records")
    rec = np.frombuffer(body, dtype="<f8").astype(np.float64).reshape(-1, width)
    if not np.all(np.isfinite(rec)):
        raise DatasetFormatError(f"{path}: non-finite values in records")
    tail = rec[:, -3:]
    if not np.all(np.isin(tail[:, 0], (0.0, 1.0))) or np.any(tail[:, 1:] != np.round(tail[:, 1:])):
        raise DatasetFormatError(f"{path}: terminal/episode/step columns are not integral")
    return _records_to_arrays(header, rec)


def read_dataset(path) -> tuple[DatasetHeader, list[Transition]]:
    data = read_dataset_arrays(path)
    return data.header, data.to_transitions()


def relabel_rewards(
    transitions: Sequence[Transition],
    reward_fn: Callable[[np.ndarray, np.ndarray, np.ndarray, str], float],
    task_ids: Iterable[str],
) -> list[Transition]:
    """Return copies of ``transitions`` with rewards for ``task_ids`` (re)computed."""
    task_ids = list(task_ids)
    out = []
    for i, tr in enumerate(transitions):
        rewards = dict(tr.rewards)
        for k in task_ids:
            r = float(reward_fn(tr.observation, tr.action, tr.next_observation, k))
            if not np.isfinite(r):
                raise NonFiniteError(
                    f"reward_fn returned {r} for task {k!r} at transition {i} "
                    f"(episode {tr.episode_id}, step {tr.step_index})"
                )
            rewards[k] = r
        out.append(Transition(tr.observation, tr.action, rewards, tr.next_observation,
                              tr.terminal, tr.episode_id, tr.step_index))
    return out


def sample_snippets(
    transitions: Sequence[Transition],
    rng: np.random.Generator,
    batch_size: int,
    length: int,
    source_task: str | None = None,
) -> list[TrajectorySnippet]:
    """Uniformly sample snippets that stay inside one episode."""
    ep = np.array([t.episode_id for t in transitions], dtype=np.int64)
    st = np.array([t.step_index for t in transitions], dtype=np.int64)
    n = len(transitions) - length + 1
    if length < 2:
        raise ValueError("snippet length must be at least 2")
    ok = np.ones(max(n, 0), dtype=bool)
    for k in range(1, length):
        ok &= (ep[k:k + n] == ep[:n]) & (st[k:k + n] == st[:n] + k)
    starts = np.flatnonzero(ok)
    if starts.size == 0:
        raise ValueError(f"no episode contains {length} consecutive steps")
    picks = starts[rng.integers(0, starts.size, size=batch_size)]
    return [TrajectorySnippet(list(transitions[i:i + length]), source_task) for i in picks]


def nstep_return(snippet: TrajectorySnippet, t: int, gamma: float, v_boot: float, task_id: str) -> float:
    """Discounted reward from step ``t`` to ``N-1`` plus ``gamma**(N-t) * v_boot``.

    Steps are numbered 1..N as in a snippet ``s_1 .. s_N``; ``v_boot`` is the
    value estimate at ``s_N``. A terminal step before ``s_N`` ends the sum
    with no bootstrap.
    """
    n = len(snippet)
    if not 1 <= t <= n - 1:
        raise ValueError(f"t={t} outside 1..{n - 1}")
    total = 0.0
    discount = 1.0
    for j in range(t, n):
        step = snippet.steps[j - 1]
        total += discount * step.rewards[task_id]
        if step.terminal:
            return total
        discount *= gamma
    return total + discount * v_boot


def nstep_returns(rewards, terminals, gamma: float, v_boot) -> np.ndarray:
    """Vectorized :func:`nstep_return` for all ``t = 1..N-1`` of a batch.

    ``rewards`` and ``terminals`` are ``(B, N)``; ``v_boot`` is ``(B,)``.
    Returns ``(B, N-1)``.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    terminals = np.asarray(terminals, dtype=bool)
    n = rewards.shape[1]
    out = np.empty((rewards.shape[0], n - 1))
    running = np.asarray(v_boot, dtype=np.float64).copy()
    for j in range(n - 2, -1, -1):
        running = rewards[:, j] + gamma * np.where(terminals[:, j], 0.0, running)
        out[:, j] = running
    return out


def task_onehot(task_index: int, n_tasks: int) -> np.ndarray:
    v = np.zeros(n_tasks)
    v[task_index] = 1.0
    return v


def condition(observations, task_index: int, n_tasks: int) -> np.ndarray:
    """Append the task one-hot to (..., obs_dim) observations."""
    observations = np.asarray(observations, dtype=np.float64)
    hot = np.broadcast_to(task_onehot(task_index, n_tasks), observations.shape[:-1] + (n_tasks,))
    return np.concatenate([observations, hot], axis=-1)


@dataclass
class SnippetBatch:
    """A batch of snippets for one task, as ``(B, N, ...)`` arrays.

    Observations already carry the task one-hot, so every network sees
    ``obs_dim + n_tasks`` inputs.
    """

    observations: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_observations: np.ndarray
    terminals: np.ndarray

    def __post_init__(self):
        if self.observations.ndim != 3 or self.observations.shape[1] < 2 or self.observations.shape[0] < 1:
            raise ValueError(f"batch needs shape (B>=1, N>=2, obs), got {self.observations.shape}")

    @property
    def batch_size(self) -> int:
        return self.observations.shape[0]

    @property
    def length(self) -> int:
        return self.observations.shape[1]

    @classmethod
    def from_arrays(cls, data: TransitionArrays, idx: np.ndarray, task_index: int) -> "SnippetBatch":
        nt = len(data.header.task_ids)
        return cls(
            observations=condition(data.observations[idx], task_index, nt),
            actions=data.actions[idx],
            rewards=data.rewards[idx, task_index],
            next_observations=condition(data.next_observations[idx], task_index, nt),
            terminals=data.terminals[idx],
        )

    @classmethod
    def from_snippets(cls, snippets: Sequence[TrajectorySnippet], task_id: str, task_ids: Sequence[str]) -> "SnippetBatch":
        task_ids = list(task_ids)
        k, nt = task_ids.index(task_id), len(task_ids)
        obs = np.array([[s.observation for s in sn.steps] for sn in snippets], dtype=np.float64)
        nxt = np.array([[s.next_observation for s in sn.steps] for sn in snippets], dtype=np.float64)
        return cls(
            observations=condition(obs, k, nt),
            actions=np.array([[s.action for s in sn.steps] for sn in snippets], dtype=np.float64),
            rewards=np.array([[s.rewards[task_id] for s in sn.steps] for sn in snippets], dtype=np.float64),
            next_observations=condition(nxt, k, nt),
            terminals=np.array([[s.terminal for s in sn.steps] for sn in snippets], dtype=bool),
        )

    def take(self, rows) -> "SnippetBatch":
        return SnippetBatch(self.observations[rows], self.actions[rows], self.rewards[rows],
                            self.next_observations[rows], self.terminals[rows])
