import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvexplore.gridworld import make_env
from cvexplore.mdp import (
    NStepSegment,
    ReplayBuffer,
    TabularEnv,
    TabularMdp,
    Trajectory,
    buffer_sample,
    collect_segments,
    discounted_return,
    sample_trajectory,
    trajectory_segments,
)
from cvexplore.oracle import random_mdp


def single_state_mdp(gamma=0.9, reward=0.0):
    return TabularMdp(np.ones((1, 1, 1)), np.full((1, 1), reward), np.ones(1), gamma)


def two_cycle_mdp(gamma=0.5, n_actions=1):
    P = np.zeros((2, n_actions, 2))
    P[0, :, 1] = 1.0
    P[1, :, 0] = 1.0
    return TabularMdp(P, np.zeros((2, n_actions)), np.array([1.0, 0.0]), gamma)


def test_tabular_mdp_rejects_bad_rows():
    P = np.full((2, 1, 2), 0.6)
    with pytest.raises(ValueError):
        TabularMdp(P, np.zeros((2, 1)), np.array([1.0, 0.0]), 0.5)
    with pytest.raises(ValueError):
        TabularMdp(np.full((2, 1, 2), 0.5), np.zeros((2, 1)), np.array([0.7, 0.7]), 0.5)
    with pytest.raises(ValueError):
        TabularMdp(np.full((2, 1, 2), 0.5), np.zeros((2, 1)), np.array([1.0, 0.0]), 1.0)


def test_single_state_trajectory():
    env = TabularEnv(single_state_mdp())
    traj = sample_trajectory(env, lambda s: np.ones(1), 3, np.random.default_rng(0))
    assert traj.actions == [0, 0, 0]
    assert traj.states == [0, 0, 0, 0]


def test_two_cycle_alternates():
    env = TabularEnv(two_cycle_mdp())
    traj = sample_trajectory(env, lambda s: np.ones(1), 6, np.random.default_rng(0))
    assert traj.states == [0, 1, 0, 1, 0, 1, 0]


def test_gridworld_rollout_repeatable():
    env = make_env("Empty-6x6")
    uniform = lambda s: np.full(4, 0.25)
    a = sample_trajectory(env, uniform, 200, np.random.default_rng(7))
    b = sample_trajectory(env, uniform, 200, np.random.default_rng(7))
    assert a.states == b.states and a.actions == b.actions


def test_rollout_stops_at_absorbing_state():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = 1.0
    P[1, 0, 1] = 1.0
    mdp = TabularMdp(P, np.array([[1.0], [0.0]]), np.array([1.0, 0.0]), 0.9)
    traj = sample_trajectory(TabularEnv(mdp, absorbing=[1]), lambda s: np.ones(1), 50, np.random.default_rng(0))
    assert traj.absorbed and traj.states == [0, 1] and traj.rewards == [1.0]


def test_discounted_return_examples():
    assert discounted_return([1, 1, 1], 0.0) == 1.0
    assert discounted_return([0, 0, 1], 0.5) == 0.25
    assert discounted_return(np.ones(200), 0.98) == pytest.approx((1 - 0.98**200) / 0.02, rel=1e-12)
    with pytest.raises(ValueError):
        discounted_return([1.0], 1.0)


@given(
    rewards=st.lists(st.floats(-10, 10), min_size=1, max_size=30),
    alpha=st.floats(-5, 5),
    gamma=st.floats(0, 0.99),
)
def test_discounted_return_is_linear(rewards, alpha, gamma):
    lhs = discounted_return([alpha * r for r in rewards], gamma)
    rhs = alpha * discounted_return(rewards, gamma)
    assert lhs == pytest.approx(rhs, abs=1e-9)


def test_empirical_transitions_match_kernel():
    rng = np.random.default_rng(3)
    mdp = random_mdp(rng, 6, 3, 0.9)
    env = TabularEnv(mdp)
    draws = np.array([env.step(2, 1, rng)[0] for _ in range(100_000)])
    freq = np.bincount(draws, minlength=6) / draws.size
    assert 0.5 * np.abs(freq - mdp.transition[2, 1]).sum() < 0.02


def _cap_trajectory(n_states):
    # a trajectory of n_states states cut by the step cap
    return Trajectory(list(range(n_states)), [0] * (n_states - 1), [0.0] * (n_states - 1))


class _IdEnv:
    def components(self, s):
        return (s,)


def test_segments_from_trajectory_of_length_12():
    segs = trajectory_segments(_IdEnv(), _cap_trajectory(12), 10)
    full = [s for s in segs if s.truncated_at is None]
    tail = [s for s in segs if s.truncated_at is not None]
    assert len(full) == 2
    assert [s.truncated_at for s in tail] == list(range(9, 0, -1))
    assert all(len(s.states) == 11 and len(s.actions) == 10 for s in segs)
    assert tail[0].states[:10] == [(t,) for t in range(2, 12)]


def test_unit_horizon_segments_are_transitions():
    segs = trajectory_segments(_IdEnv(), _cap_trajectory(6), 1)
    assert [(s.states, s.truncated_at) for s in segs] == [([(t,), (t + 1,)], None) for t in range(5)]


def test_short_trajectory_segments_all_truncated():
    segs = trajectory_segments(_IdEnv(), _cap_trajectory(4), 10)
    assert len(segs) == 3 and all(s.truncated_at is not None for s in segs)


def test_absorbed_trajectory_pads_with_absorbing_state():
    traj = Trajectory([0, 1, 2], [0, 0], [0.0, 1.0], absorbed=True)
    segs = trajectory_segments(_IdEnv(), traj, 4)
    assert segs[0].absorbed_at == 2 and segs[0].states == [(0,), (1,), (2,), (2,), (2,)]
    assert segs[1].absorbed_at == 1 and segs[1].done
    assert all(s.truncated_at is None for s in segs)


def test_segment_invariants():
    with pytest.raises(ValueError):
        NStepSegment([(0,)] * 3, [0] * 2, 0.0, 3)
    with pytest.raises(ValueError):
        NStepSegment([(0,)] * 3, [0] * 2, 0.0, 2, truncated_at=2)


def test_collect_segments_covers_request():
    env = TabularEnv(two_cycle_mdp())
    segs, trajs = collect_segments(env, lambda s: np.ones(1), 30, 3, np.random.default_rng(0), max_steps=20)
    assert len(segs) >= 30 and len(trajs) == 2


def _seg(tag):
    return NStepSegment([(tag,), (tag,)], [0], float(tag), 1)


def test_buffer_sample_single_segment():
    buf = ReplayBuffer(5)
    buf.add(_seg(1))
    out = buffer_sample(buf, 4, np.random.default_rng(0))
    assert len(out) == 4 and all(s is buf.segments[0] for s in out)


def test_buffer_sample_membership_and_empty():
    buf = ReplayBuffer(50)
    buf.extend(_seg(i) for i in range(50))
    out = buf.sample(32, np.random.default_rng(0))
    assert len(out) == 32 and all(s in buf.segments for s in out)
    with pytest.raises(ValueError):
        buffer_sample(ReplayBuffer(3), 1, np.random.default_rng(0))


def test_buffer_sample_is_uniform():
    n, draws = 10, 100_000
    buf = ReplayBuffer(n)
    buf.extend(_seg(i) for i in range(n))
    out = buf.sample(draws, np.random.default_rng(11))
    counts = np.bincount([int(s.reward) for s in out], minlength=n)
    sigma = np.sqrt(draws * (1 / n) * (1 - 1 / n))
    assert np.all(np.abs(counts - draws / n) < 3 * sigma)


@settings(max_examples=30)
@given(capacity=st.integers(1, 20), extra=st.integers(0, 20))
def test_buffer_fifo_eviction(capacity, extra):
    buf = ReplayBuffer(capacity)
    segs = [_seg(i) for i in range(capacity + extra)]
    for s in segs:
        buf.add(s)
    assert len(buf) == capacity
    assert all(s not in buf.segments for s in segs[:extra])
    assert list(buf.segments) == segs[extra:]
