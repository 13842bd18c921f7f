import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cvexplore.gridworld import make_env
from cvexplore.mdp import TabularEnv, TabularMdp
from cvexplore.metrics import (
    bootstrap_ci,
    discounted_feature_measure,
    entropy,
    exact_marginal_visitation,
    iqm,
    mc_discounted_feature_entropy,
    mc_expected_return,
)
from cvexplore.oracle import random_mdp, random_policy


def test_iqm_examples():
    assert iqm([0, 1, 2, 3, 4, 5, 6, 7]) == 3.5
    assert iqm([2.5] * 9) == 2.5
    assert iqm([1.0]) == 1.0
    assert iqm([1.0, 3.0]) == 2.0
    with pytest.raises(ValueError):
        iqm([])


def test_iqm_is_robust_to_outliers():
    rng = np.random.default_rng(0)
    v = rng.normal(size=15)
    w = np.append(v, 1e6)
    assert abs(iqm(w) - iqm(v)) < abs(np.mean(w) - np.mean(v))


@settings(max_examples=50)
@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=30))
def test_iqm_within_range(values):
    assert min(values) - 1e-9 <= iqm(values) <= max(values) + 1e-9


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-10, 10), min_size=1, max_size=15), st.integers(0, 100))
def test_bootstrap_band_contains_point(values, seed):
    lo, hi = bootstrap_ci(values, np.random.default_rng(seed), n_resamples=200)
    assert lo <= iqm(values) <= hi


def test_bootstrap_band_zero_width_for_identical_values():
    assert bootstrap_ci([0.7] * 5, np.random.default_rng(0)) == (0.7, 0.7)


def test_entropy_examples():
    assert entropy({"a": 1.0}) == 0.0
    assert entropy(np.full(8, 1 / 8)) == pytest.approx(np.log(8))


def test_pinned_policy_entropy_zero():
    # a single-state chain: every visit lands on one feature
    mdp = TabularMdp(np.ones((1, 1, 1)), np.zeros((1, 1)), np.ones(1), 0.98)
    h = mc_discounted_feature_entropy(TabularEnv(mdp), lambda s: np.ones(1), lambda s: s, 5, np.random.default_rng(0))
    assert h == 0.0


def test_mc_entropy_matches_exact_marginal():
    rng = np.random.default_rng(1)
    mdp = random_mdp(rng, 6, 2, 0.9, sparsity=0.3)
    pi = random_policy(rng, 6, 2)
    exact = exact_marginal_visitation(mdp, pi)
    env = TabularEnv(mdp)
    h_mc = mc_discounted_feature_entropy(env, lambda s: pi[s], lambda s: s, 10_000, rng, gamma=0.9, max_steps=300)
    assert h_mc == pytest.approx(entropy(exact), abs=0.02)


def test_exact_marginal_is_distribution():
    rng = np.random.default_rng(2)
    mdp = random_mdp(rng, 5, 3, 0.95)
    nu = exact_marginal_visitation(mdp, random_policy(rng, 5, 3))
    assert nu.sum() == pytest.approx(1.0) and (nu >= 0).all()


def test_mc_entropy_bounded_by_log_cells():
    env = make_env("Empty-6x6")
    h = mc_discounted_feature_entropy(env, lambda s: np.full(4, 0.25), lambda s: s.agent_pos, 30, np.random.default_rng(0))
    assert 0.0 <= h <= np.log(env.n_floor())


def test_zero_reward_return():
    mdp = TabularMdp(np.ones((1, 1, 1)), np.zeros((1, 1)), np.ones(1), 0.9)
    assert mc_expected_return(TabularEnv(mdp), lambda s: np.ones(1), 10, np.random.default_rng(0)) == 0.0


def chain(n_steps, gamma=0.98):
    # deterministic chain reaching an absorbing goal after n_steps transitions
    S = n_steps + 1
    P = np.zeros((S, 1, S))
    for s in range(S - 1):
        P[s, 0, s + 1] = 1.0
    P[S - 1, 0, S - 1] = 1.0
    R = np.zeros((S, 1))
    R[S - 2, 0] = 1.0
    return TabularEnv(TabularMdp(P, R, np.eye(S)[0], gamma), absorbing=[S - 1])


@pytest.mark.parametrize("n_steps", [1, 3, 4])
def test_goal_n_steps_away(n_steps):
    # returns count rewards from t = 0: the reward of the k-th transition carries 0.98 ** (k - 1)
    ret = mc_expected_return(chain(n_steps), lambda s: np.ones(1), 3, np.random.default_rng(0), gamma=0.98)
    assert ret == 0.98 ** (n_steps - 1)


def test_gridworld_deterministic_return():
    env = make_env("Empty-5x5")
    plan = iter([2, 2, 1, 2, 2])  # forward x2, turn right, forward x2

    def policy(s):
        p = np.zeros(4)
        p[next(plan)] = 1.0
        return p

    ret = mc_expected_return(env, policy, 1, np.random.default_rng(0), gamma=0.98)
    assert ret == pytest.approx(0.98**4)


def test_return_standard_error_shrinks():
    env = make_env("Empty-4x4")
    uniform = lambda s: np.full(4, 0.25)
    rng = np.random.default_rng(3)
    spread = []
    for n in (10, 160):
        spread.append(np.std([mc_expected_return(env, uniform, n, rng) for _ in range(30)]))
    assert spread[1] < spread[0] / 2


def test_absorbed_rollout_keeps_mass_on_final_feature():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 1] = 1.0
    mdp = TabularMdp(P, np.zeros((2, 1)), np.eye(2)[0], 0.5)
    m = discounted_feature_measure(TabularEnv(mdp, absorbing=[1]), lambda s: np.ones(1), lambda s: s, 1, 0.5, np.random.default_rng(0))
    assert m == {0: pytest.approx(0.5), 1: pytest.approx(0.5)}
