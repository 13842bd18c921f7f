import numpy as np
import pytest

from cvexplore.checks import tabular_segments
from cvexplore.gridworld import make_env
from cvexplore.mdp import NStepSegment, TabularMdp
from cvexplore.oracle import exact_visitation, random_mdp, random_policy
from cvexplore.visitation import (
    FactoredVisitationNet,
    TabularVisitation,
    dump_probes,
    log_prob_future,
    make_target,
    make_targets,
    max_tv,
    model_table,
    sample_future_state,
    sample_geometric,
    table_policy,
    visitation_loss,
    visitation_update,
)


def cycle_model(gamma=0.5):
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 0] = 1.0
    mdp = TabularMdp(P, np.zeros((2, 1)), np.eye(2)[0], gamma)
    return mdp, TabularVisitation(exact_visitation(mdp, np.ones((2, 1))).table)


def test_geometric_offsets_positive_and_gamma_zero():
    rng = np.random.default_rng(0)
    assert (sample_geometric(0.0, rng, 100) == 1).all()
    x = sample_geometric(0.9, rng, 100_000)
    assert x.min() >= 1 and x.mean() == pytest.approx(10.0, rel=0.02)
    with pytest.raises(ValueError):
        sample_geometric(1.0, rng)


def test_unit_horizon_target():
    # N = 1: Delta = 1 returns s_{t+1}, otherwise a bootstrap sample
    mdp, model = cycle_model()
    seg = NStepSegment([(0,), (1,)], [0], 0.0, 1)
    rng = np.random.default_rng(0)
    draws = [make_target(seg, table_policy(np.ones((2, 1))), model, 0.5, rng) for _ in range(2000)]
    for d in draws:
        assert d.bootstrapped == (d.delta > 1)
        if d.delta == 1:
            assert d.target_state == (1,)
    assert np.mean([d.bootstrapped for d in draws]) == pytest.approx(0.5, abs=0.04)


def test_in_window_targets_are_segment_states():
    seg = NStepSegment([(t % 2,) for t in range(11)], [0] * 10, 0.0, 10)
    _, model = cycle_model(0.9)
    heads, acts, targets, deltas, boot = make_targets([seg] * 500, table_policy(np.ones((2, 1))), model, 0.9, np.random.default_rng(1))
    inside = ~boot
    assert (targets[inside, 0] == deltas[inside] % 2).all()
    assert (heads[:, 0] == 0).all() and (acts == 0).all()


def test_truncated_window_bootstraps_from_last_valid_state():
    # an episode cut after 2 steps: offsets past 2 bootstrap from s_{t+2}
    seg = NStepSegment([(0,), (1,), (0,), (0,), (0,)], [0, 0, 0, 0], 0.0, 4, truncated_at=2)
    P = np.zeros((2, 1, 2))
    P[0, 0, 0] = P[1, 0, 1] = 1.0  # self loops: d(. | s) is a point mass at s
    model = TabularVisitation(exact_visitation(TabularMdp(P, np.zeros((2, 1)), np.eye(2)[0], 0.9), np.ones((2, 1))).table)
    out = make_targets([seg] * 300, table_policy(np.ones((2, 1))), model, 0.9, np.random.default_rng(2))
    targets, deltas, boot = out[2], out[3], out[4]
    assert (boot == (deltas > 2)).all()
    assert (targets[boot, 0] == 0).all()


def test_absorbed_window_targets_absorbing_state():
    seg = NStepSegment([(0,), (1,), (1,), (1,)], [0, 0, 0], 1.0, 3, absorbed_at=1)
    _, model = cycle_model(0.9)
    out = make_targets([seg] * 200, table_policy(np.ones((2, 1))), model, 0.9, np.random.default_rng(3))
    assert (out[2][:, 0] == 1).all() and not out[4].any()


def test_bootstrap_uses_target_network():
    env = make_env("Empty-5x5")
    rng = np.random.default_rng(4)
    model = FactoredVisitationNet(env.block_sizes, 4, rng, 16, 1)
    model.net.params[:] = 0.0  # online: uniform heads
    comps = np.array([[1, 1, 0]] * 4000)
    acts = np.zeros(4000, dtype=int)
    # target logits strongly prefer x = 3
    model.target.params[:] = 0.0
    W, b = model.target.layers[-1]
    b[3] = 50.0
    xs = sample_future_state(model, comps, acts, True, rng)[:, 0]
    assert (xs == 3).all()
    xs = sample_future_state(model, comps, acts, False, rng)[:, 0]
    assert len(set(xs)) > 1


def test_factored_log_prob_is_sum_of_heads():
    env = make_env("Empty-5x5")
    rng = np.random.default_rng(5)
    model = FactoredVisitationNet(env.block_sizes, 4, rng, 16, 2)
    comps = np.array([[1, 2, 3], [3, 3, 0]])
    future = np.array([[2, 2, 1], [1, 3, 0]])
    heads = model.head_log_probs(comps, [0, 2])
    expected = [sum(h[i, future[i, k]] for k, h in enumerate(heads)) for i in range(2)]
    assert np.allclose(log_prob_future(model, comps, [0, 2], future), expected)
    assert all(np.allclose(np.exp(h).sum(axis=1), 1.0) for h in heads)


def test_loss_decreases_on_fixed_targets():
    rng = np.random.default_rng(6)
    model = FactoredVisitationNet((4,), 2, rng, 16, 2, lr=1e-2)
    comps = np.array([[0], [1], [2], [3]])
    acts = np.array([0, 1, 0, 1])
    targets = np.array([[1], [2], [3], [0]])
    first = visitation_loss(model, comps, acts, targets, with_grad=False)
    for _ in range(200):
        _, g = visitation_loss(model, comps, acts, targets)
        model.optimizer.step(model.net.params, g)
    assert visitation_loss(model, comps, acts, targets, with_grad=False) < 0.1 * first


def test_td_training_tracks_the_two_cycle():
    _, model_exact = cycle_model(0.5)
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 0] = 1.0
    mdp = TabularMdp(P, np.zeros((2, 1)), np.eye(2)[0], 0.5)
    pi = np.ones((2, 1))
    rng = np.random.default_rng(7)
    model = FactoredVisitationNet((2,), 1, rng, 16, 2, lr=3e-3)
    for step in range(1, 601):
        visitation_update(model, tabular_segments(mdp, pi, 64, 2, rng), table_policy(pi), 0.5, rng)
        if step % 10 == 0:
            model.sync_target()
    # d(s1 | s0) = 2/3
    assert model_table(model, 2, 1)[0, 0, 1] == pytest.approx(2 / 3, abs=0.05)


def test_tabular_segments_follow_kernel():
    rng = np.random.default_rng(8)
    mdp = random_mdp(rng, 4, 2, 0.9)
    pi = random_policy(rng, 4, 2)
    segs = tabular_segments(mdp, pi, 20_000, 2, rng)
    heads = np.array([(s.states[0][0], s.actions[0], s.states[1][0]) for s in segs])
    mask = (heads[:, 0] == 1) & (heads[:, 1] == 0)
    freq = np.bincount(heads[mask, 2], minlength=4) / mask.sum()
    assert max_tv(freq, mdp.transition[1, 0]) < 0.05


def test_dump_probes(tmp_path):
    _, model = cycle_model()
    path = tmp_path / "probes.csv"
    dump_probes(model, [((0,), 0)], path)
    lines = path.read_text().splitlines()
    assert lines[0] == "probe,state,action,head,class,prob"
    assert len(lines) == 3
