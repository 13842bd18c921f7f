"""Verification suite shared by the ``oracle``/``verify`` commands and the tests.

Each check returns a :class:`CheckResult`; none of them raise on failure.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .agents import Actor, Batch, Critic, actor_loss, actor_samples, critic_loss, critic_targets, train
from .config import ExperimentConfig
from .gridworld import make_env, to_tabular
from .intrinsic import FeatureChannel, exact_kl_reward, intrinsic_reward, sample_features
from .mdp import NStepSegment, TabularMdp, collect_segments
from .metrics import iqm, mc_discounted_feature_entropy
from .oracle import (
    apply_T,
    check_contraction,
    check_value_bound,
    exact_visitation,
    q_value_bellman,
    q_value_from_visitation,
    random_conditional,
    random_mdp,
    random_policy,
    truncated_visitation,
)
from .visitation import (
    FactoredVisitationNet,
    TabularVisitation,
    make_targets,
    max_tv,
    model_table,
    sample_geometric,
    table_policy,
    visitation_loss,
    visitation_update,
)


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def _random_instance(rng, max_states=16, max_actions=4, positive=False):
    S = int(rng.integers(1, max_states + 1))
    A = int(rng.integers(1, max_actions + 1))
    gamma = float(rng.uniform(0.0, 0.99))
    mdp = random_mdp(rng, S, A, gamma, positive=positive, sparsity=0.0 if positive else 0.3)
    return mdp, random_policy(rng, S, A, positive=positive)


def contraction(seed: int = 0, n_instances: int = 100, tol: float = 1e-10) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = -np.inf
    for _ in range(n_instances):
        mdp, pi = _random_instance(rng)
        q1 = random_conditional(rng, mdp.n_states, mdp.n_actions)
        q2 = random_conditional(rng, mdp.n_states, mdp.n_actions)
        for n in (1, 2):
            lhs, rhs = check_contraction(mdp, pi, q1, q2, n)
            worst = max(worst, lhs - rhs)
    return CheckResult("contraction", worst <= tol, f"max excess {worst:.3e} over {n_instances} MDPs, n in (1, 2)")


def fixed_point(seed: int = 1, n_instances: int = 20) -> CheckResult:
    rng = np.random.default_rng(seed)
    fp_err = brute_err = 0.0
    for _ in range(n_instances):
        mdp, pi = _random_instance(rng)
        d = exact_visitation(mdp, pi).table
        fp_err = max(fp_err, float(np.abs(apply_T(mdp, pi, d) - d).max()))
        brute_err = max(brute_err, float(np.abs(truncated_visitation(mdp, pi, 2000) - d).max()))
    ok = fp_err <= 1e-8 and brute_err <= 1e-6
    return CheckResult("fixed-point", ok, f"|Td - d| {fp_err:.3e}, |d - truncated sum| {brute_err:.3e}")


def q_identity(seed: int = 2, n_instances: int = 20) -> CheckResult:
    rng = np.random.default_rng(seed)
    err = 0.0
    for _ in range(n_instances):
        mdp, pi = _random_instance(rng)
        err = max(err, float(np.abs(q_value_bellman(mdp, pi) - q_value_from_visitation(mdp, pi)).max()))
    return CheckResult("q-identity", err <= 1e-7, f"max |Q_bellman - Q_visitation| {err:.3e}")


def value_bound(seed: int = 3, n_instances: int = 50) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = -np.inf
    identity_err = 0.0
    for _ in range(n_instances):
        mdp, pi = _random_instance(rng, positive=True)
        pi2 = random_policy(rng, mdp.n_states, mdp.n_actions)
        q, bound = check_value_bound(mdp, pi, pi2)
        # float rounding only: the bound is tight where the two measures coincide
        worst = max(worst, float((bound - q - 1e-12 * np.abs(q)).max()))
        q, bound = check_value_bound(mdp, pi, pi)
        identity_err = max(identity_err, float(np.abs(q - bound).max()))
    ok = worst <= 0.0 and identity_err <= 1e-9
    return CheckResult("value-bound", ok, f"max (bound - Q) beyond rounding {worst:.3e}, identity gap {identity_err:.3e}")


def geometric_chi2(seed: int = 4, draws: int = 1_000_000, gammas=(0.5, 0.9, 0.98), level: float = 0.01) -> CheckResult:
    rng = np.random.default_rng(seed)
    pvals = []
    for g in gammas:
        x = sample_geometric(g, rng, size=draws)
        # bins 1..K with expected count >= 5, the remaining tail pooled into one bin
        k = np.arange(1, 100_000)
        pk = (1 - g) * g ** (k - 1)
        K = int(np.max(k[draws * pk >= 5]))
        expected = np.append(draws * pk[:K], draws * g**K)
        observed = np.append(np.bincount(x, minlength=K + 1)[1 : K + 1], np.sum(x > K))
        pvals.append(float(stats.chisquare(observed, expected).pvalue))
    ok = min(pvals) > level
    return CheckResult("geometric-offsets", ok, "p-values " + ", ".join(f"{p:.3f}" for p in pvals))


def _cycle_mdp(gamma: float) -> TabularMdp:
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 0] = 1.0
    return TabularMdp(P, np.zeros((2, 1)), np.array([1.0, 0.0]), gamma)


def bootstrap_fraction(seed: int = 5, n_segments: int = 100_000, gamma: float = 0.9, horizons=(1, 5, 10), tol: float = 0.01) -> CheckResult:
    """Fraction of N-step targets that bootstrap, against ``gamma**N``."""
    rng = np.random.default_rng(seed)
    mdp = _cycle_mdp(gamma)
    model = TabularVisitation(exact_visitation(mdp, np.ones((2, 1))).table)
    policy = table_policy(np.ones((2, 1)))
    errs = []
    for n in horizons:
        seg = NStepSegment([((t % 2),) for t in range(n + 1)], [0] * n, 0.0, n)
        boot = make_targets([seg] * n_segments, policy, model, gamma, rng)[4]
        errs.append(abs(boot.mean() - gamma**n))
    ok = max(errs) <= tol
    return CheckResult("bootstrap-fraction", ok, "abs errors " + ", ".join(f"{e:.4f}" for e in errs) + f" (gamma {gamma})")


def intrinsic_unbiased(seed: int = 6, n_samples: int = 100_000, tol: float = 0.01) -> CheckResult:
    """MC mean of the single-sample reward against the exact negative KL on three instances."""
    rng = np.random.default_rng(seed)
    worst = 0.0
    for inst in range(3):
        S, A = 5 + inst, 2 + inst
        mdp = random_mdp(rng, S, A, 0.9, sparsity=0.3)
        pi = random_policy(rng, S, A)
        if inst == 2:
            # feature of (future state, action)
            K = 4
            channel = FeatureChannel("state-action", rng.dirichlet(np.full(K, 5.0)), lambda c, a: (c[0] + a) % K, uses_action=True)
        else:
            K = 3
            channel = FeatureChannel("state-mod", rng.dirichlet(np.full(K, 5.0)), lambda c, a: c[0] % K)
        model = TabularVisitation(exact_visitation(mdp, pi).table)
        policy = table_policy(pi)
        exact = exact_kl_reward(channel, mdp, pi)
        s, a = rng.integers(S), rng.integers(A)
        z, log_q = sample_features(channel, model, policy, np.full((n_samples, 1), s), np.full(n_samples, a), rng)
        worst = max(worst, abs(float(intrinsic_reward(channel, z, log_q).mean()) - float(exact[s, a])))
    return CheckResult("intrinsic-unbiased", worst <= tol, f"max |MC mean - exact| {worst:.4f}")


def _relative_errors(loss_fn, params, grad, rng, n_coords=100, h=1e-6, floor=1e-7):
    idx = rng.choice(params.size, size=min(n_coords, params.size), replace=False)
    errs = []
    for i in idx:
        p = params.copy()
        p[i] += h
        up = loss_fn(p)
        p[i] -= 2 * h
        down = loss_fn(p)
        fd = (up - down) / (2 * h)
        errs.append(abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), floor))
    return max(errs)


def gradients(seed: int = 7, n_coords: int = 100, tol: float = 1e-4, hidden: int = 32) -> CheckResult:
    """Central finite differences for the visitation, critic and actor losses."""
    rng = np.random.default_rng(seed)
    env = make_env("Empty-6x6")
    B = 16
    comps = np.array([env.components(env.reset(rng)) for _ in range(B)])
    comps[:, 0] = rng.integers(1, 5, size=B)
    comps[:, 1] = rng.integers(1, 5, size=B)
    comps[:, 2] = rng.integers(0, 4, size=B)
    actions = rng.integers(0, 4, size=B)

    model = FactoredVisitationNet(env.block_sizes, 4, rng, hidden, 2)
    targets = np.stack([rng.integers(0, b, size=B) for b in env.block_sizes], axis=1)
    p0 = model.net.params.copy()
    _, g = visitation_loss(model, comps, actions, targets, p0)
    e_vis = _relative_errors(lambda p: visitation_loss(model, comps, actions, targets, p, with_grad=False), p0, g, rng, n_coords)

    critic = Critic(env.block_sizes, 4, rng, hidden, 2)
    y = rng.normal(size=B)
    p0 = critic.net.params.copy()
    _, g = critic_loss(critic, comps, actions, y, p0)
    e_crit = _relative_errors(lambda p: critic_loss(critic, comps, actions, y, p, with_grad=False), p0, g, rng, n_coords)

    actor = Actor(env.block_sizes, 4, rng, hidden, 2)
    adv = rng.normal(size=B)
    p0 = actor.net.params.copy()
    _, g = actor_loss(actor, comps, actions, adv, p0)
    e_act = _relative_errors(lambda p: actor_loss(actor, comps, actions, adv, p, with_grad=False), p0, g, rng, n_coords)

    worst = max(e_vis, e_crit, e_act)
    return CheckResult("gradients", worst <= tol, f"max relative error visitation {e_vis:.2e}, critic {e_crit:.2e}, actor {e_act:.2e}")


# learned visitation against the oracle

VISITATION_FIT = dict(hidden=128, layers=2, lr=1e-3, batch=256, steps=4000, horizon=10, sync_every=20)


def tabular_segments(mdp: TabularMdp, pi: np.ndarray, n: int, horizon: int, rng) -> list[NStepSegment]:
    """Fresh windows whose head pair is uniform over (s, a), then following ``pi``."""
    S, A = mdp.n_states, mdp.n_actions
    cum_p = np.cumsum(mdp.transition, axis=2)
    cum_pi = np.cumsum(pi, axis=1)
    s = rng.integers(S, size=n)
    a = rng.integers(A, size=n)
    states, actions = [s], [a]
    for t in range(horizon):
        s = np.minimum((cum_p[s, a] < rng.random((n, 1))).sum(axis=1), S - 1)
        states.append(s)
        if t < horizon - 1:
            a = np.minimum((cum_pi[s] < rng.random((n, 1))).sum(axis=1), A - 1)
            actions.append(a)
    states = np.stack(states, axis=1).tolist()
    actions = np.stack(actions, axis=1).tolist()
    return [NStepSegment([(x,) for x in states[i]], actions[i], 0.0, horizon) for i in range(n)]


def _fit_tabular_visitation(mdp: TabularMdp, pi: np.ndarray, seed: int, budget_s: float, fit: dict, tol: float):
    """TD-train a single-block model on a fresh stream; stops once within ``tol`` or out of time.

    Every step draws new windows, so the only error left is optimisation
    noise, which a linearly decaying step size removes.
    """
    rng = np.random.default_rng(seed)
    S, A = mdp.n_states, mdp.n_actions
    exact = exact_visitation(mdp, pi).table
    policy = table_policy(pi)
    model = FactoredVisitationNet((S,), A, rng, fit["hidden"], fit["layers"], fit["lr"], 1.0)
    start = time.monotonic()
    tv = max_tv(model_table(model, S, A), exact)
    for step in range(1, fit["steps"] + 1):
        model.optimizer.lr = fit["lr"] * (1 - step / fit["steps"]) + 1e-5
        visitation_update(model, tabular_segments(mdp, pi, fit["batch"], fit["horizon"], rng), policy, mdp.gamma, rng)
        if step % fit["sync_every"] == 0:
            model.sync_target()
            tv = max_tv(model_table(model, S, A), exact)
            if tv <= tol or time.monotonic() - start > budget_s:
                break
    return tv, time.monotonic() - start


def learned_visitation(seed: int = 8, budget_s: float = 600.0, tol: float = 0.05, fit: dict | None = None) -> CheckResult:
    """2-cycle and Empty-4x4 (enumerated as one joint state block) with a fixed stochastic policy."""
    fit = dict(VISITATION_FIT, **(fit or {}))
    rng = np.random.default_rng(seed)
    P = np.zeros((2, 2, 2))
    P[0, :, 1] = P[1, :, 0] = 1.0
    P[0, 1] = [0.5, 0.5]  # a lazy second action in state 0
    cycle = TabularMdp(P, np.zeros((2, 2)), np.array([1.0, 0.0]), 0.9)
    cycle_pi = np.array([[0.3, 0.7], [0.6, 0.4]])
    grid, _ = to_tabular(make_env("Empty-4x4"), 0.9)
    grid_pi = 0.5 * random_policy(rng, grid.n_states, grid.n_actions) + 0.5 / grid.n_actions
    details, ok, spent = [], True, 0.0
    for name, mdp, pi in (("2-cycle", cycle, cycle_pi), ("Empty-4x4", grid, grid_pi)):
        tv, secs = _fit_tabular_visitation(mdp, pi, seed, budget_s - spent, fit, tol)
        spent += secs
        ok &= tv <= tol
        details.append(f"{name} TV {tv:.4f} in {secs:.0f}s")
    return CheckResult("learned-visitation", ok and spent <= budget_s, ", ".join(details))


# desk-scale trends

DESK_ENTROPY = dict(
    env="Empty-6x6", extrinsic=False, iterations=600, eval_every=50, eval_rollouts=50,
    lam=0.1, lambda_sac=0.02, lr_policy=1e-3, lr_critic=1e-3, lr_visitation=1e-3, hidden=64,
)
DESK_RETURN = dict(
    env="SimpleCrossingS11N1", iterations=600, eval_every=50, eval_rollouts=20,
    lam=0.01, lambda_sac=0.002, lr_policy=1e-3, lr_critic=1e-3, lr_visitation=1e-3, hidden=64,
)


def _final_smoothed(rows, key: str, window: int = 3) -> float:
    vals = [r[key] for r in rows]
    return float(np.mean(vals[-window:]))


def run_agent(agent: str, overrides: dict, seed: int, env_seed: int = 0):
    config = ExperimentConfig(**dict(overrides, agent=agent, seeds=[seed]))
    env = make_env(config.env, env_seed)
    return train(config, env, seed)[1]


def uniform_entropy(env_id: str, n_rollouts: int = 500, seed: int = 0, gamma: float = 0.98) -> float:
    """Baseline for exploration runs, on the variant where the goal does not end episodes."""
    env = make_env(env_id).exploration_variant()
    rng = np.random.default_rng(seed)
    return mc_discounted_feature_entropy(env, lambda s: np.full(env.n_actions, 1.0 / env.n_actions), lambda s: s.agent_pos, n_rollouts, rng, gamma)


def entropy_trend(seeds=range(5), overrides: dict | None = None) -> CheckResult:
    overrides = dict(DESK_ENTROPY, **(overrides or {}))
    base = uniform_entropy(overrides["env"])
    cv = [_final_smoothed(run_agent("opac-cv", overrides, s), "entropy_estimate") for s in seeds]
    sac = [_final_smoothed(run_agent("sac", overrides, s), "entropy_estimate") for s in seeds]
    cv_iqm, sac_iqm = iqm(cv), iqm(sac)
    ok = cv_iqm > base and cv_iqm > sac_iqm
    return CheckResult("entropy-trend", ok, f"OPAC+CV {cv_iqm:.3f}, SAC {sac_iqm:.3f}, uniform {base:.3f} (iqm over {len(cv)} seeds)")


def return_trend(seeds=range(5), overrides: dict | None = None) -> CheckResult:
    overrides = dict(DESK_RETURN, **(overrides or {}))
    seeds = list(seeds)
    cv = [_final_smoothed(run_agent("opac-cv", overrides, s, env_seed=s), "return_estimate") for s in seeds]
    sac = [_final_smoothed(run_agent("sac", overrides, s, env_seed=s), "return_estimate") for s in seeds]
    n_cv, n_sac = sum(v > 0 for v in cv), sum(v > 0 for v in sac)
    ok = n_cv > len(seeds) / 2 and n_sac < n_cv
    return CheckResult("return-trend", ok, (
        f"nonzero return on {n_cv}/{len(seeds)} OPAC+CV seeds, {n_sac}/{len(seeds)} SAC seeds; "
        f"final returns OPAC+CV {np.round(cv, 4).tolist()}, SAC {np.round(sac, 4).tolist()}"
    ))


# reductions


def reductions(seeds=(0, 1), iterations: int = 5) -> CheckResult:
    """Switching the exploration channel off reproduces the soft actor-critic log exactly,
    and a zero policy-entropy weight leaves the plain actor-critic target and advantage."""
    small = dict(env="Empty-5x5", iterations=iterations, hidden=32, eval_rollouts=3)
    identical = all(
        run_agent("opac-cv", dict(small, lam=0.0), s) == run_agent("sac", small, s) for s in seeds
    )

    rng = np.random.default_rng(9)
    env = make_env("Empty-5x5")
    segs, _ = collect_segments(env, lambda s: np.full(4, 0.25), 32, 3, rng)
    batch = Batch.from_segments(segs[:32])
    actor = Actor(env.block_sizes, 4, rng, 32, 2, lambda_sac=0.0)
    critic = Critic(env.block_sizes, 4, rng, 32, 2)
    y = critic_targets(batch, actor, critic, np.zeros(32), 0.0, 0.98, np.random.default_rng(1))
    a_next = _plain_sample(actor, batch.next_states, np.random.default_rng(1))
    y_plain = batch.rewards + 0.98 * np.where(batch.done, 0.0, critic.q(batch.next_states, a_next, use_target=True))
    a, adv = actor_samples(actor, critic, batch.states, np.random.default_rng(2))
    adv_plain = critic.q(batch.states, a)
    plain = np.array_equal(y, y_plain) and np.array_equal(adv, adv_plain)
    return CheckResult("reductions", identical and plain, f"lam=0 log identical to SAC: {identical}; lambda_sac=0 plain actor-critic: {plain}")


def _plain_sample(actor, states, rng):
    from .visitation import _sample_rows

    return _sample_rows(actor(states), rng)


ORACLE_CHECKS = (contraction, fixed_point, q_identity, value_bound)
FAST_CHECKS = ORACLE_CHECKS + (geometric_chi2, bootstrap_fraction, intrinsic_unbiased, gradients, reductions)
