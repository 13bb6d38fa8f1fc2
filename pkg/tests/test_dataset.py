import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from abmprior.dataset import (
    DatasetHeader,
    SnippetBatch,
    Transition,
    TrajectorySnippet,
    TransitionArrays,
    condition,
    nstep_return,
    nstep_returns,
    read_dataset,
    read_dataset_arrays,
    relabel_rewards,
    sample_snippets,
    write_dataset,
)
from abmprior.envs import Persona, generate_dataset, stol, two_goal_point_mass
from abmprior.errors import DatasetFormatError, NonFiniteError

from . import oracles

HEADER = DatasetHeader(2, 1, ("a", "b"), "toy", 3)


def _episode(ep, n, rng, offset=0.0):
    obs = rng.standard_normal((n + 1, 2))
    return [
        Transition(obs[i], rng.standard_normal(1), {"a": float(rng.normal()), "b": offset + i},
                   obs[i + 1], False, ep, i)
        for i in range(n)
    ]


def _snippet(rewards, terminals=None, task="a"):
    terminals = terminals or [False] * len(rewards)
    steps = [Transition(np.zeros(2), np.zeros(1), {task: r}, np.zeros(2), d, 0, i)
             for i, (r, d) in enumerate(zip(rewards, terminals))]
    return TrajectorySnippet(steps)


def test_empty_round_trip(tmp_path):
    write_dataset(tmp_path / "d.bin", HEADER, [])
    header, tr = read_dataset(tmp_path / "d.bin")
    assert header == HEADER and tr == []
    assert (tmp_path / "d.bin").read_bytes().count(b"\n") == 1


def test_single_transition_round_trip(tmp_path, rng):
    t = _episode(0, 1, rng)
    write_dataset(tmp_path / "d.bin", HEADER, t)
    assert read_dataset(tmp_path / "d.bin")[1] == t


def test_large_round_trip_bytes(tmp_path, rng):
    trs = [t for e in range(100) for t in _episode(e, 100, rng)]
    write_dataset(tmp_path / "a.bin", HEADER, trs)
    header, back = read_dataset(tmp_path / "a.bin")
    assert back == trs
    write_dataset(tmp_path / "b.bin", header, back)
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_arrays_round_trip(tmp_path, rng):
    trs = [t for e in range(3) for t in _episode(e, 7, rng)]
    data = TransitionArrays.from_transitions(HEADER, trs)
    write_dataset(tmp_path / "d.bin", HEADER, data)
    assert read_dataset_arrays(tmp_path / "d.bin").to_transitions() == trs


def test_write_rejects_unknown_task(tmp_path):
    t = Transition(np.zeros(2), np.zeros(1), {"a": 0.0, "zzz": 1.0}, np.zeros(2))
    with pytest.raises(KeyError, match="zzz"):
        write_dataset(tmp_path / "d.bin", HEADER, [t])


def test_write_rejects_dimension_mismatch(tmp_path):
    t = Transition(np.zeros(3), np.zeros(1), {"a": 0.0, "b": 1.0}, np.zeros(2))
    with pytest.raises(ValueError):
        write_dataset(tmp_path / "d.bin", HEADER, [t])


def test_read_rejects_malformed(tmp_path, rng):
    p = tmp_path / "d.bin"
    p.write_bytes(b"not json\n")
    with pytest.raises(DatasetFormatError):
        read_dataset(p)
    write_dataset(p, HEADER, _episode(0, 3, rng))
    p.write_bytes(p.read_bytes()[:-4])
    with pytest.raises(DatasetFormatError):
        read_dataset(p)
    p.write_bytes(b"")
    with pytest.raises(DatasetFormatError):
        read_dataset(p)


def test_header_validation():
    with pytest.raises(ValueError):
        DatasetHeader(2, 1, (), "x", 0)
    with pytest.raises(ValueError):
        DatasetHeader(2, 1, ("a", "a"), "x", 0)


def test_relabel_zero_and_idempotent(rng):
    trs = _episode(0, 5, rng)
    out = relabel_rewards(trs, lambda o, a, n, k: 0.0, ["new"])
    assert all(t.rewards["new"] == 0.0 for t in out)
    assert all(t.rewards["a"] == s.rewards["a"] for t, s in zip(out, trs))
    same = relabel_rewards(trs, lambda o, a, n, k: None, [])
    assert same == trs
    lookup = {id(t.observation): t.rewards["a"] for t in trs}
    again = relabel_rewards(trs, lambda o, a, n, k: lookup[id(o)], ["a"])
    assert again == trs


def test_relabel_non_finite_names_transition(rng):
    trs = _episode(4, 3, rng)
    with pytest.raises(NonFiniteError, match="transition 0.*episode 4"):
        relabel_rewards(trs, lambda o, a, n, k: float("nan"), ["a"])


def test_relabel_stol_matches_direct_evaluation():
    env = two_goal_point_mass()
    data = generate_dataset(env, [Persona("p", "reach-A", 0.5)], None, 3, episode_len=50, seed=1).data
    trs = data.to_transitions()
    goal = np.array([0.3, -0.4])

    def fn(o, a, n, k):
        return stol(float(np.linalg.norm(n - goal)), 0.05, 0.5)

    out = relabel_rewards(trs, fn, ["reach-C"])
    for i in np.random.default_rng(0).choice(len(out), 100, replace=False):
        d = float(np.linalg.norm(trs[i].next_observation - goal))
        assert out[i].rewards["reach-C"] == pytest.approx(oracles.stol(d, 0.05, 0.5), abs=1e-12)


def test_single_episode_exact_length(rng):
    trs = _episode(0, 4, rng)
    for sn in sample_snippets(trs, rng, 20, 4):
        assert sn.steps == trs


def test_snippet_start_frequencies(rng):
    trs = _episode(0, 6, rng)
    starts = [s.steps[0].step_index for s in sample_snippets(trs, rng, 10_000, 5)]
    assert set(starts) == {0, 1}
    assert abs(np.mean(starts) - 0.5) < 0.02


def test_sampling_determinism(rng):
    trs = [t for e in range(5) for t in _episode(e, 20, rng)]
    a = [s.steps[0].step_index for s in sample_snippets(trs, np.random.default_rng(1), 50, 3)]
    b = [s.steps[0].step_index for s in sample_snippets(trs, np.random.default_rng(1), 50, 3)]
    c = [s.steps[0].step_index for s in sample_snippets(trs, np.random.default_rng(2), 50, 3)]
    assert a == b and a != c


def test_sampling_without_valid_start(rng):
    with pytest.raises(ValueError):
        sample_snippets(_episode(0, 3, rng), rng, 1, 5)


@given(lengths=st.lists(st.integers(1, 12), min_size=1, max_size=6), n=st.integers(2, 6), seed=st.integers(0, 99))
def test_snippets_never_cross_episodes(lengths, n, seed):
    rng = np.random.default_rng(seed)
    trs = [t for e, L in enumerate(lengths) for t in _episode(e, L, rng)]
    data = TransitionArrays.from_transitions(HEADER, trs)
    if max(lengths) < n:
        assert data.snippet_starts(n).size == 0
        return
    idx = data.sample_snippet_indices(rng, 30, n)
    ep = data.episode_ids[idx]
    st_ = data.step_indices[idx]
    assert np.all(ep == ep[:, :1])
    assert np.all(np.diff(st_, axis=1) == 1)
    expected = sum(max(L - n + 1, 0) for L in lengths)
    assert data.snippet_starts(n).size == expected


def test_nstep_return_examples():
    assert nstep_return(_snippet([1, 1, 1]), 1, 1.0, 0.0, "a") == 2.0
    assert nstep_return(_snippet([9, 1, 2, 0]), 2, 0.5, 4.0, "a") == 3.0
    assert nstep_return(_snippet([3, 5, 7]), 1, 0.0, 100.0, "a") == 3.0
    assert nstep_return(_snippet([3, 5, 7]), 2, 0.0, 100.0, "a") == 5.0
    with pytest.raises(ValueError):
        nstep_return(_snippet([1, 2]), 2, 0.9, 0.0, "a")
    with pytest.raises(ValueError):
        nstep_return(_snippet([1, 2]), 0, 0.9, 0.0, "a")


def test_nstep_terminal_cuts_bootstrap():
    sn = _snippet([1.0, 2.0, 3.0, 4.0], [False, True, False, False])
    assert nstep_return(sn, 1, 0.5, 100.0, "a") == 1.0 + 0.5 * 2.0


@given(rewards=st.lists(st.floats(-5, 5), min_size=2, max_size=8), gamma=st.floats(0, 1),
       v=st.floats(-10, 10), data=st.data())
def test_nstep_matches_oracle_and_is_linear_in_bootstrap(rewards, gamma, v, data):
    n = len(rewards)
    t = data.draw(st.integers(1, n - 1))
    sn = _snippet(rewards)
    r = nstep_return(sn, t, gamma, v, "a")
    assert r == pytest.approx(oracles.nstep(rewards, gamma, v, t), abs=1e-9)
    r1 = nstep_return(sn, t, gamma, v + 1.0, "a")
    assert r1 - r == pytest.approx(gamma ** (n - t), abs=1e-9)


@given(B=st.integers(1, 4), N=st.integers(2, 7), seed=st.integers(0, 999))
def test_vectorized_returns_match_scalar(B, N, seed):
    rng = np.random.default_rng(seed)
    rew = rng.standard_normal((B, N))
    term = rng.random((B, N)) < 0.2
    boot = rng.standard_normal(B)
    out = nstep_returns(rew, term, 0.9, boot)
    for b in range(B):
        sn = _snippet(list(rew[b]), list(term[b]))
        for t in range(1, N):
            assert out[b, t - 1] == pytest.approx(nstep_return(sn, t, 0.9, boot[b], "a"), abs=1e-12)


def test_snippet_batch_conditions_observations(rng):
    trs = [t for e in range(2) for t in _episode(e, 6, rng)]
    data = TransitionArrays.from_transitions(HEADER, trs)
    idx = data.sample_snippet_indices(rng, 4, 3)
    batch = SnippetBatch.from_arrays(data, idx, 1)
    assert batch.observations.shape == (4, 3, 4)
    assert np.all(batch.observations[..., 2:] == [0.0, 1.0])
    np.testing.assert_array_equal(batch.rewards, data.rewards[idx, 1])
    sn = [TrajectorySnippet([trs[i] for i in row]) for row in idx]
    other = SnippetBatch.from_snippets(sn, "b", HEADER.task_ids)
    np.testing.assert_array_equal(other.observations, batch.observations)
    np.testing.assert_array_equal(other.rewards, batch.rewards)


def test_condition_shape():
    x = condition(np.zeros((3, 5, 2)), 0, 3)
    assert x.shape == (3, 5, 5)
    np.testing.assert_array_equal(x[0, 0], [0, 0, 1, 0, 0])


def test_snippet_validation(rng):
    trs = _episode(0, 3, rng)
    with pytest.raises(ValueError):
        TrajectorySnippet([trs[0], trs[2]])
    with pytest.raises(ValueError):
        TrajectorySnippet([trs[0]])


def test_chained(rng):
    data = TransitionArrays.from_transitions(HEADER, _episode(0, 5, rng))
    assert data.is_chained()
    data.next_observations[1] += 1.0
    assert not data.is_chained()
