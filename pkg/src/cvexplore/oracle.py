"""Exact tabular computations of conditional visitation distributions.

Tables are indexed ``(s, a, s_bar)``. Everything here is a pure function
of dense numpy arrays and serves as ground truth for the learned models.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mdp import TabularMdp

STATE_CAP = 4096


@dataclass(frozen=True)
class ConditionalVisitation:
    table: np.ndarray  # (S, A, S)
    gamma: float

    def __post_init__(self):
        t = self.table
        if (t < -1e-12).any() or not np.allclose(t.sum(axis=2), 1.0, rtol=0, atol=1e-8):
            raise ValueError("each (s, a) slice must be a probability distribution")

    def state_action(self, policy: np.ndarray) -> np.ndarray:
        """``d(s_bar, a_bar | s, a) = pi(a_bar | s_bar) d(s_bar | s, a)``, shape (S, A, S, A)."""
        return self.table[..., None] * policy[None, None, :, :]


def check_policy(policy: np.ndarray, mdp: TabularMdp | None = None) -> np.ndarray:
    pi = np.asarray(policy, dtype=float)
    if mdp is not None and pi.shape != (mdp.n_states, mdp.n_actions):
        raise ValueError(f"policy shape {pi.shape} does not match the MDP")
    if (pi < 0).any() or not np.allclose(pi.sum(axis=1), 1.0, rtol=0, atol=1e-9):
        raise ValueError("policy rows must be probability distributions")
    return pi


def state_kernel(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    """``P_pi(s' | s) = sum_a pi(a | s) p(s' | s, a)``."""
    return np.einsum("sa,sat->st", policy, mdp.transition)


def _check_size(mdp: TabularMdp):
    if mdp.n_states > STATE_CAP:
        raise ValueError(f"{mdp.n_states} states exceed the dense-solve cap of {STATE_CAP}")


def exact_visitation(mdp: TabularMdp, policy: np.ndarray) -> ConditionalVisitation:
    """Solve ``d = (1 - g) P + g P pi d`` with one dense linear solve.

    Averaging the fixed-point equation over ``a ~ pi(.|s)`` gives a state-level
    system ``D = (1 - g) P_pi + g P_pi D`` whose solution then yields
    ``d = (1 - g) P + g P D``.
    """
    _check_size(mdp)
    pi = check_policy(policy, mdp)
    g = mdp.gamma
    P_pi = state_kernel(mdp, pi)
    A = np.eye(mdp.n_states) - g * P_pi
    D = np.linalg.solve(A, (1 - g) * P_pi)
    table = (1 - g) * mdp.transition + g * np.einsum("sat,tu->sau", mdp.transition, D)
    return ConditionalVisitation(table, g)


def truncated_visitation(mdp: TabularMdp, policy: np.ndarray, K: int = 2000) -> np.ndarray:
    """Brute-force ``sum_{k<=K} (1 - g) g^(k-1) p_k(s_bar | s, a)`` by repeated kernel products."""
    pi = check_policy(policy, mdp)
    g = mdp.gamma
    P_pi = state_kernel(mdp, pi)
    S, A = mdp.n_states, mdp.n_actions
    pk = mdp.transition.reshape(S * A, S).copy()
    total = (1 - g) * pk
    w = 1 - g
    for _ in range(K - 1):
        w *= g
        if w == 0.0:
            break
        pk = pk @ P_pi
        total += w * pk
    return total.reshape(S, A, S)


def apply_T(mdp: TabularMdp, policy: np.ndarray, q) -> np.ndarray:
    """``(1 - g) p(s_bar|s,a) + g E_{s'~p, a'~pi}[q(s_bar|s',a')]``.

    ``q`` may be any (signed) table; the operator is affine in it.
    """
    table = q.table if isinstance(q, ConditionalVisitation) else np.asarray(q, dtype=float)
    g = mdp.gamma
    averaged = np.einsum("ta,tau->tu", policy, table)
    return (1 - g) * mdp.transition + g * np.einsum("sat,tu->sau", mdp.transition, averaged)


def lbar_norm(f: np.ndarray, n: int) -> float:
    """``(max_{s,a} sum_{s_bar} |f|^n)^(1/n)``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    f = np.abs(np.asarray(f, dtype=float))
    return float(np.max(np.sum(f**n, axis=-1)) ** (1.0 / n))


def check_contraction(mdp, policy, q, q2, n: int) -> tuple[float, float]:
    lhs = lbar_norm(apply_T(mdp, policy, q) - apply_T(mdp, policy, q2), n)
    rhs = mdp.gamma * lbar_norm(np.asarray(q) - np.asarray(q2), n)
    return lhs, rhs


def q_value_bellman(mdp: TabularMdp, policy: np.ndarray) -> np.ndarray:
    pi = check_policy(policy, mdp)
    g = mdp.gamma
    P_pi = state_kernel(mdp, pi)
    r_pi = np.sum(pi * mdp.reward, axis=1)
    V = np.linalg.solve(np.eye(mdp.n_states) - g * P_pi, r_pi)
    return mdp.reward + g * mdp.transition @ V


def q_value_from_visitation(mdp: TabularMdp, policy: np.ndarray, visitation: ConditionalVisitation | None = None) -> np.ndarray:
    """``Q(s,a) = R(s,a) + g / (1 - g) * sum d(s_bar, a_bar | s, a) R(s_bar, a_bar)``.

    The visitation distribution starts one step ahead, so the immediate
    reward is added separately and the future part carries one factor g.
    """
    d = exact_visitation(mdp, policy) if visitation is None else visitation
    g = mdp.gamma
    future = np.einsum("sau,ub->sa", d.table, policy * mdp.reward)
    return mdp.reward + g / (1 - g) * future


def q_value_exact(mdp: TabularMdp, policy: np.ndarray, atol: float = 1e-7) -> np.ndarray:
    """Q by a Bellman solve, cross-checked against the visitation identity."""
    q1 = q_value_bellman(mdp, policy)
    q2 = q_value_from_visitation(mdp, policy)
    if not np.allclose(q1, q2, rtol=0, atol=atol):
        raise AssertionError(f"Q-value paths disagree by {np.max(np.abs(q1 - q2)):.3e}")
    return q1


def log_ratio_sup(d1: np.ndarray, d2: np.ndarray) -> np.ndarray:
    """``max_{s_bar,a_bar} |log d1 - log d2|`` for every conditioning (s, a)."""
    S, A = d1.shape[:2]
    a = d1.reshape(S, A, -1)
    b = d2.reshape(S, A, -1)
    support = (a > 0) | (b > 0)
    if ((a > 0) != (b > 0)).any():
        raise ValueError("visitation measures have different supports; the log-ratio is infinite")
    with np.errstate(divide="ignore"):
        diff = np.where(support, np.abs(np.log(np.where(support, a, 1)) - np.log(np.where(support, b, 1))), 0.0)
    return diff.max(axis=2)


def check_value_bound(mdp: TabularMdp, policy: np.ndarray, policy_star: np.ndarray):
    """Return ``(Q_pi, bound)`` with ``bound = Q_star * exp(-||log d_pi / d_star||_inf)``."""
    if (mdp.reward < 0).any():
        raise ValueError("the value bound needs non-negative rewards")
    d = exact_visitation(mdp, policy).state_action(policy)
    d_star = exact_visitation(mdp, policy_star).state_action(policy_star)
    sup = log_ratio_sup(d, d_star)
    q = q_value_bellman(mdp, policy)
    q_star = q_value_bellman(mdp, policy_star)
    return q, q_star * np.exp(-sup)


def triangle_bound(mdp: TabularMdp, policy, policy_star, q_star_measure: np.ndarray):
    """Looser bound through a strictly positive reference measure over (s_bar, a_bar)."""
    ref = np.asarray(q_star_measure, dtype=float)
    if (ref <= 0).any():
        raise ValueError("reference measure must be strictly positive")
    d = exact_visitation(mdp, policy).state_action(policy)
    d_star = exact_visitation(mdp, policy_star).state_action(policy_star)
    ref_b = np.broadcast_to(ref, d.shape)
    e1 = log_ratio_sup(d, ref_b)
    e2 = log_ratio_sup(d_star, ref_b)
    q = q_value_bellman(mdp, policy)
    q_star = q_value_bellman(mdp, policy_star)
    return q, q_star * np.exp(-e1) * np.exp(-e2)


def power_iterate(mdp: TabularMdp, policy: np.ndarray, q0: np.ndarray, k: int) -> list[np.ndarray]:
    out = [np.asarray(q0, dtype=float)]
    for _ in range(k):
        out.append(apply_T(mdp, policy, out[-1]))
    return out


# random instances for property checks


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float, positive: bool = False, sparsity: float = 0.0) -> TabularMdp:
    """Dirichlet transitions; ``sparsity`` zeroes a fraction of entries (never a whole row)."""
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    if sparsity > 0 and not positive:
        mask = rng.random(P.shape) < sparsity
        keep = np.argmax(P, axis=2)
        np.put_along_axis(mask, keep[..., None], False, axis=2)
        P = np.where(mask, 0.0, P)
        P /= P.sum(axis=2, keepdims=True)
    if positive:
        P = 0.9 * P + 0.1 / n_states
    R = rng.random((n_states, n_actions))
    p0 = rng.dirichlet(np.ones(n_states))
    return TabularMdp(P, R, p0, gamma)


def random_policy(rng: np.random.Generator, n_states: int, n_actions: int, positive: bool = True) -> np.ndarray:
    pi = rng.dirichlet(np.ones(n_actions), size=n_states)
    if positive:
        pi = 0.95 * pi + 0.05 / n_actions
    return pi


def random_conditional(rng: np.random.Generator, n_states: int, n_actions: int) -> np.ndarray:
    return rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
