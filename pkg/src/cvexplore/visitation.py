"""Parametric conditional visitation model trained by bootstrapped cross-entropy.

The model predicts, for a state-action pair, an independent categorical
distribution over every state component. Training targets are drawn from
the N-step mixture: a geometric offset picks either a future state stored
in the segment or, past the window, a sample of the frozen target model.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .mdp import NStepSegment
from .nnet import HIDDEN_LAYERS, HIDDEN_WIDTH, Adam, Mlp, TargetPair, log_softmax, one_hot_blocks, split_blocks

# Maps a batch of component rows (B, n_blocks) to action probabilities (B, A).
BatchPolicy = Callable[[np.ndarray], np.ndarray]


class FactoredVisitationNet:
    def __init__(
        self,
        block_sizes,
        n_actions: int,
        rng: np.random.Generator,
        hidden: int = HIDDEN_WIDTH,
        layers: int = HIDDEN_LAYERS,
        lr: float = 1e-5,
        tau: float = 1.0,
    ):
        self.block_sizes = tuple(int(b) for b in block_sizes)
        self.n_actions = int(n_actions)
        n_in = sum(self.block_sizes) + self.n_actions
        self.net = Mlp([n_in] + [hidden] * layers + [sum(self.block_sizes)], rng)
        self.pair = TargetPair(self.net, tau)
        self.optimizer = Adam(lr)

    @property
    def target(self) -> Mlp:
        return self.pair.target

    def inputs(self, comps, actions) -> np.ndarray:
        comps = np.atleast_2d(np.asarray(comps, dtype=int))
        actions = np.atleast_1d(np.asarray(actions, dtype=int))
        act = np.zeros((len(actions), self.n_actions))
        act[np.arange(len(actions)), actions] = 1.0
        return np.concatenate([one_hot_blocks(comps, self.block_sizes), act], axis=1)

    def head_log_probs(self, comps, actions, use_target: bool = False, params=None) -> list[np.ndarray]:
        net = self.target if use_target else self.net
        logits = net(self.inputs(comps, actions), params)
        return [log_softmax(block) for block in split_blocks(logits, self.block_sizes)]

    def head_probs(self, comps, actions, use_target: bool = False) -> list[np.ndarray]:
        return [np.exp(lp) for lp in self.head_log_probs(comps, actions, use_target)]

    def sync_target(self) -> None:
        self.pair.update()


class TabularVisitation:
    """Adapter exposing an exact (S, A, S) table through the model interface."""

    def __init__(self, table: np.ndarray):
        self.table = np.asarray(table, dtype=float)
        self.block_sizes = (self.table.shape[2],)
        self.n_actions = self.table.shape[1]

    def head_probs(self, comps, actions, use_target: bool = False) -> list[np.ndarray]:
        comps = np.atleast_2d(np.asarray(comps, dtype=int))
        actions = np.atleast_1d(np.asarray(actions, dtype=int))
        return [self.table[comps[:, 0], actions]]

    def head_log_probs(self, comps, actions, use_target: bool = False) -> list[np.ndarray]:
        with np.errstate(divide="ignore"):
            return [np.log(p) for p in self.head_probs(comps, actions)]


@dataclass
class BootstrapTargetSample:
    head: tuple  # (component tuple, action)
    delta: int
    target_state: tuple
    bootstrapped: bool


def sample_geometric(gamma: float, rng: np.random.Generator, size=None):
    """Offset ``k >= 1`` with probability ``(1 - gamma) * gamma**(k - 1)``."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    return rng.geometric(1.0 - gamma, size=size)


def _sample_rows(probs: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    u = rng.random((probs.shape[0], 1))
    idx = (np.cumsum(probs, axis=1) < u * probs.sum(axis=1, keepdims=True)).sum(axis=1)
    return np.minimum(idx, probs.shape[1] - 1)


def sample_future_state(model, comps, actions, use_target: bool, rng: np.random.Generator) -> np.ndarray:
    """Draw one future state per row, each component independently."""
    heads = model.head_probs(comps, actions, use_target)
    return np.stack([_sample_rows(p, rng) for p in heads], axis=1)


def log_prob_future(model, comps, actions, future, use_target: bool = False) -> np.ndarray:
    future = np.atleast_2d(np.asarray(future, dtype=int))
    heads = model.head_log_probs(comps, actions, use_target)
    rows = np.arange(future.shape[0])
    return sum(lp[rows, future[:, k]] for k, lp in enumerate(heads))


def make_targets(segments: list[NStepSegment], policy: BatchPolicy, model, gamma: float, rng: np.random.Generator):
    """Vectorised target generation for a batch of segments.

    Returns ``(head_comps, head_actions, target_comps, deltas, bootstrapped)``.
    Past a truncation the window is shortened (the geometric tail from that
    point is the bootstrap branch); past an absorbing state the target is
    that state itself.
    """
    B = len(segments)
    deltas = sample_geometric(gamma, rng, size=B)
    heads = np.array([seg.states[0] for seg in segments], dtype=int)
    head_actions = np.array([seg.actions[0] for seg in segments], dtype=int)
    targets = np.zeros_like(heads)
    boot_rows, boot_from = [], []
    for i, (seg, d) in enumerate(zip(segments, deltas)):
        if seg.absorbed_at is not None and d >= seg.absorbed_at:
            targets[i] = seg.states[seg.absorbed_at]
        elif d <= seg.valid_steps:
            targets[i] = seg.states[d]
        else:
            boot_rows.append(i)
            boot_from.append(seg.states[seg.valid_steps])
    bootstrapped = np.zeros(B, dtype=bool)
    if boot_rows:
        boot_from = np.array(boot_from, dtype=int)
        probs = policy(boot_from)
        next_actions = _sample_rows(probs, rng)
        targets[boot_rows] = sample_future_state(model, boot_from, next_actions, True, rng)
        bootstrapped[boot_rows] = True
    return heads, head_actions, targets, deltas, bootstrapped


def make_target(segment: NStepSegment, policy: BatchPolicy, model, gamma: float, rng) -> BootstrapTargetSample:
    heads, actions, targets, deltas, boot = make_targets([segment], policy, model, gamma, rng)
    return BootstrapTargetSample((tuple(heads[0]), int(actions[0])), int(deltas[0]), tuple(int(c) for c in targets[0]), bool(boot[0]))


def visitation_loss(model: FactoredVisitationNet, comps, actions, targets, params=None, with_grad: bool = True):
    """Mean ``-log d(target | s, a)`` and, optionally, its gradient in the online parameters.

    Targets are plain integers here, so nothing flows back through how they
    were generated.
    """
    net = model.net
    x = model.inputs(comps, actions)
    logits, cache = net.forward(x, params)
    targets = np.atleast_2d(np.asarray(targets, dtype=int))
    B = targets.shape[0]
    rows = np.arange(B)
    loss = 0.0
    grad_logits = []
    for k, block in enumerate(split_blocks(logits, model.block_sizes)):
        logp = log_softmax(block)
        loss -= logp[rows, targets[:, k]].sum()
        g = np.exp(logp)
        g[rows, targets[:, k]] -= 1.0
        grad_logits.append(g / B)
    loss /= B
    if not with_grad:
        return loss
    grad, _ = net.backward(cache, np.concatenate(grad_logits, axis=1), params)
    return loss, grad


def visitation_update(model: FactoredVisitationNet, segments, policy: BatchPolicy, gamma: float, rng) -> float:
    comps, actions, targets, _, _ = make_targets(segments, policy, model, gamma, rng)
    loss, grad = visitation_loss(model, comps, actions, targets)
    model.optimizer.step(model.net.params, grad)
    return float(loss)


def table_policy(probs: np.ndarray) -> BatchPolicy:
    """Batch policy over single-block (tabular) states."""
    probs = np.asarray(probs, dtype=float)
    return lambda comps: probs[np.atleast_2d(comps)[:, 0]]


def model_table(model, n_states: int, n_actions: int, use_target: bool = False) -> np.ndarray:
    """Dense (S, A, S) table of a single-block model, for oracle comparisons."""
    s = np.repeat(np.arange(n_states), n_actions)[:, None]
    a = np.tile(np.arange(n_actions), n_states)
    return model.head_probs(s, a, use_target)[0].reshape(n_states, n_actions, n_states)


def max_tv(table_a: np.ndarray, table_b: np.ndarray) -> float:
    return float(0.5 * np.abs(table_a - table_b).sum(axis=-1).max())


def dump_probes(model, probes, path) -> None:
    """Write ``d(. | s, a)`` per head for each probe ``(components, action)`` as CSV."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["probe", "state", "action", "head", "class", "prob"])
        for i, (comps, a) in enumerate(probes):
            heads = model.head_probs([comps], [a])
            for k, p in enumerate(heads):
                for c, v in enumerate(p[0]):
                    w.writerow([i, " ".join(map(str, comps)), a, k, c, repr(float(v))])

