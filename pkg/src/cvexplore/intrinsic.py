"""Feature channels and the relative-entropy intrinsic reward.

A channel pairs a deterministic feature map over (future state, action)
with a strictly positive reference measure over a finite feature space.
The conditional feature distribution is obtained from a visitation model
in closed form, and the reward of a sampled feature ``z`` is
``log q*(z) - log q(z | s, a)``.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .oracle import ConditionalVisitation, exact_visitation
from .visitation import TabularVisitation, _sample_rows

DEFAULT_WEIGHT = 0.01
CHANNEL_KEYS = ("cv-position", "mv-position", "policy-entropy")
MAX_ENUMERATION = 200_000


@dataclass
class FeatureChannel:
    """``feature_map(components, action) -> index in Z`` (or None outside Z).

    ``position`` enables the closed form for position features: a pair of
    block indices (x, y) plus the list of cells forming Z. Otherwise the
    feature distribution is obtained by enumerating the factored state space.
    """

    name: str
    q_star: np.ndarray
    feature_map: Callable | None = None
    weight: float = DEFAULT_WEIGHT
    uses_action: bool = False
    position: tuple | None = None
    cells: list | None = None
    _enum: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.q_star = np.asarray(self.q_star, dtype=float)
        if abs(self.q_star.sum() - 1.0) > 1e-9:
            raise ValueError("relative measure must sum to 1")
        if (self.q_star <= 0).any():
            raise ValueError("relative measure must be strictly positive on the feature space")
        if self.weight < 0:
            raise ValueError("channel weight must be non-negative")
        self.log_q_star = np.log(self.q_star)

    @property
    def n_features(self) -> int:
        return self.q_star.size

    def feature(self, comps, action=0):
        if self.position is not None:
            return self._cell_index.get((comps[self.position[0]], comps[self.position[1]]))
        return self.feature_map(tuple(comps), action)

    @property
    def _cell_index(self) -> dict:
        if "cells" not in self._enum:
            self._enum["cells"] = {c: i for i, c in enumerate(self.cells)}
        return self._enum["cells"]


def position_channel(env, weight: float = DEFAULT_WEIGHT, name: str = "cv-position") -> FeatureChannel:
    """Agent (x, y) over the floor cells of a gridworld, uniform reference measure."""
    cells = list(env.floor)
    return FeatureChannel(name, np.full(len(cells), 1.0 / len(cells)), weight=weight, position=(0, 1), cells=cells)


def policy_entropy_channel(n_actions: int, weight: float) -> FeatureChannel:
    """Z = A and q(z | s, a) = pi(z | s): the soft actor-critic bonus."""
    return FeatureChannel("policy-entropy", np.full(n_actions, 1.0 / n_actions), lambda comps, a: a, weight, uses_action=True)


def _enumeration(channel: FeatureChannel, block_sizes, n_actions: int, policy):
    """All factored outcomes and the (outcome, action) -> feature index table."""
    key = (tuple(block_sizes), n_actions)
    if key not in channel._enum:
        n = int(np.prod(block_sizes))
        if n > MAX_ENUMERATION:
            raise ValueError(f"factored space of {n} outcomes is too large to marginalise")
        outcomes = np.array(list(itertools.product(*[range(b) for b in block_sizes])), dtype=int)
        acts = range(n_actions) if channel.uses_action else [0]
        zmap = np.array([[_or_minus1(channel.feature_map(tuple(o), a)) for a in acts] for o in outcomes])
        channel._enum[key] = (outcomes, zmap)
    return channel._enum[key]


def _or_minus1(z):
    return -1 if z is None else int(z)


def _outcome_probs(heads: list[np.ndarray]) -> np.ndarray:
    # row-major product matching itertools.product ordering
    out = heads[0]
    for h in heads[1:]:
        out = (out[:, :, None] * h[:, None, :]).reshape(out.shape[0], -1)
    return out


def feature_probs(channel: FeatureChannel, model, comps, actions, policy=None) -> np.ndarray:
    """Closed-form ``q(z | s, a)`` for a batch, shape (B, |Z|), renormalised on Z."""
    comps = np.atleast_2d(np.asarray(comps, dtype=int))
    if channel.name == "policy-entropy":
        return policy(comps)
    heads = model.head_probs(comps, actions)
    if channel.position is not None:
        bx, by = channel.position
        xs = np.array([c[0] for c in channel.cells])
        ys = np.array([c[1] for c in channel.cells])
        q = heads[bx][:, xs] * heads[by][:, ys]
    else:
        outcomes, zmap = _enumeration(channel, model.block_sizes, model.n_actions, policy)
        P = _outcome_probs(heads)
        if channel.uses_action:
            P = P[:, :, None] * policy(outcomes)[None, :, :]
        else:
            P = P[:, :, None]
        q = np.zeros((comps.shape[0], channel.n_features))
        valid = zmap >= 0
        for col in range(zmap.shape[1]):
            idx = np.flatnonzero(valid[:, col])
            np.add.at(q.T, zmap[idx, col], P[:, idx, col].T)
    total = q.sum(axis=1, keepdims=True)
    return q / np.where(total > 0, total, 1.0)


def sample_features(channel: FeatureChannel, model, policy, comps, actions, rng: np.random.Generator):
    """Draw ``z ~ q(. | s, a)`` per row; returns ``(z, log q(z | s, a))``."""
    q = feature_probs(channel, model, comps, actions, policy)
    z = _sample_rows(q, rng)
    return z, np.log(q[np.arange(len(z)), z])


def sample_feature(channel, model, policy, s, a, rng):
    z, log_q = sample_features(channel, model, policy, [s], [a], rng)
    return int(z[0]), float(log_q[0])


def intrinsic_reward(channel: FeatureChannel, z, log_q):
    return channel.log_q_star[z] - log_q


def exact_feature_probs(channel: FeatureChannel, mdp, policy: np.ndarray, visitation: ConditionalVisitation | None = None) -> np.ndarray:
    """Exact ``q(z | s, a)`` for every (s, a) of a tabular MDP, shape (S, A, |Z|)."""
    d = exact_visitation(mdp, policy) if visitation is None else visitation
    model = TabularVisitation(d.table)
    S, A = mdp.n_states, mdp.n_actions
    s = np.repeat(np.arange(S), A)[:, None]
    a = np.tile(np.arange(A), S)
    pol = lambda comps: policy[np.atleast_2d(comps)[:, 0]]
    return feature_probs(channel, model, s, a, pol).reshape(S, A, -1)


def exact_kl_reward(channel: FeatureChannel, mdp, policy: np.ndarray) -> np.ndarray:
    """``-KL(q(. | s, a) || q*)`` for every (s, a)."""
    q = exact_feature_probs(channel, mdp, policy)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(q > 0, q * (np.log(q) - channel.log_q_star), 0.0)
    return -terms.sum(axis=-1)


class MarginalVisitationModel:
    """Categorical over Z fitted to discounted feature visits of recent data."""

    def __init__(self, n_features: int, smoothing: float = 1e-3):
        self.smoothing = smoothing
        self.probs = np.full(n_features, 1.0 / n_features)

    def fit(self, features, weights) -> None:
        counts = np.bincount(np.asarray(features, dtype=int), weights=np.asarray(weights, dtype=float), minlength=self.probs.size)
        counts = counts + self.smoothing * max(counts.sum(), 1e-12)
        self.probs = counts / counts.sum()

    def log_prob(self, z):
        return np.log(self.probs[z])


def marginal_intrinsic_reward(channel: FeatureChannel, marginal: MarginalVisitationModel, z):
    return channel.log_q_star[z] - marginal.log_prob(z)
