"""Monte Carlo evaluation metrics and run aggregation."""

from __future__ import annotations

from collections import defaultdict

import numpy as np

from .mdp import DEFAULT_MAX_STEPS, discounted_return, sample_trajectory
from .oracle import exact_visitation


def discounted_feature_measure(env, policy, feature, n_rollouts: int, gamma: float, rng, max_steps: int = DEFAULT_MAX_STEPS) -> dict:
    """Empirical discounted measure of features from the initial state.

    Step ``t`` carries weight ``(1 - gamma) * gamma**t``. Once an absorbing
    state is reached its feature keeps the remaining mass; rollouts cut by
    the step cap lose theirs and the result is renormalised.
    """
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    mass: dict = defaultdict(float)
    for _ in range(n_rollouts):
        traj = sample_trajectory(env, policy, max_steps, rng)
        w = 1.0 - gamma
        for s in traj.states:
            mass[feature(s)] += w
            w *= gamma
        if traj.absorbed:
            mass[feature(traj.states[-1])] += w / (1.0 - gamma)
    total = sum(mass.values())
    return {z: m / total for z, m in mass.items()}


def entropy(probs) -> float:
    p = np.asarray(list(probs.values()) if isinstance(probs, dict) else probs, dtype=float)
    p = p[p > 0]
    return float(-np.sum(p * np.log(p)))


def mc_discounted_feature_entropy(env, policy, feature, n_rollouts: int, rng, gamma: float = 0.98, max_steps: int = DEFAULT_MAX_STEPS) -> float:
    """Shannon entropy (nats) of the empirical discounted feature measure."""
    return entropy(discounted_feature_measure(env, policy, feature, n_rollouts, gamma, rng, max_steps))


def mc_expected_return(env, policy, n_rollouts: int, rng, gamma: float = 0.98, max_steps: int = DEFAULT_MAX_STEPS) -> float:
    if n_rollouts < 1:
        raise ValueError("n_rollouts must be >= 1")
    return float(np.mean([discounted_return(sample_trajectory(env, policy, max_steps, rng), gamma) for _ in range(n_rollouts)]))


def exact_marginal_visitation(mdp, policy: np.ndarray) -> np.ndarray:
    """``(1 - g) p0 + g * sum_{s,a} p0(s) pi(a|s) d(. | s, a)``: the discounted state measure from p0."""
    d = exact_visitation(mdp, policy)
    g = mdp.gamma
    return (1 - g) * mdp.initial + g * np.einsum("s,sa,sau->u", mdp.initial, policy, d.table)


def iqm(values) -> float:
    """Mean of the values lying between the 25th and 75th percentiles (inclusive).

    Percentiles use linear interpolation between order statistics
    (numpy's default), so ``iqm(range(8)) == 3.5``. When no value falls
    inside the band (two values) the band's midpoint, the median, is used.
    """
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        raise ValueError("iqm of an empty sequence")
    lo, hi = np.percentile(v, [25, 75])
    kept = v[(v >= lo) & (v <= hi)]
    if kept.size == 0:
        return float(np.median(v))
    return float(kept.mean())


def bootstrap_ci(values, rng: np.random.Generator, n_resamples: int = 1000, level: float = 0.95, stat=iqm) -> tuple[float, float]:
    """Percentile bootstrap band for ``stat``, widened if needed to contain the point estimate."""
    v = np.asarray(values, dtype=float)
    point = stat(v)
    idx = rng.integers(0, v.size, size=(n_resamples, v.size))
    stats = np.array([stat(v[row]) for row in idx])
    alpha = (1 - level) / 2
    lo, hi = np.quantile(stats, [alpha, 1 - alpha])
    return float(min(lo, point)), float(max(hi, point))
