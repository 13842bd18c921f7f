"""MDP abstraction, trajectory sampling, N-step segments and the replay buffer."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Any, Callable, Hashable, Protocol, Sequence

import numpy as np

State = Hashable
# Maps a state to its action probability vector.
PolicyLike = Callable[[Any], np.ndarray]

DEFAULT_MAX_STEPS = 200
DEFAULT_BUFFER_SIZE = 1000


class Environment(Protocol):
    """What the samplers and learners need from an environment.

    ``components`` returns the factored encoding of a state: one class index
    per one-hot block, with block widths given by ``block_sizes``.
    """

    n_actions: int
    block_sizes: tuple[int, ...]

    def reset(self, rng: np.random.Generator) -> Any: ...

    def step(self, state: Any, action: int, rng: np.random.Generator) -> tuple[Any, float]: ...

    def is_absorbing(self, state: Any) -> bool: ...

    def components(self, state: Any) -> tuple[int, ...]: ...


@dataclass(frozen=True)
class TabularMdp:
    transition: np.ndarray  # (S, A, S')
    reward: np.ndarray  # (S, A)
    initial: np.ndarray  # (S,)
    gamma: float

    def __post_init__(self):
        P = np.asarray(self.transition, dtype=float)
        R = np.asarray(self.reward, dtype=float)
        p0 = np.asarray(self.initial, dtype=float)
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "reward", R)
        object.__setattr__(self, "initial", p0)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transition must have shape (S, A, S), got {P.shape}")
        if R.shape != P.shape[:2]:
            raise ValueError(f"reward shape {R.shape} does not match transition {P.shape[:2]}")
        if p0.shape != (P.shape[0],):
            raise ValueError(f"initial shape {p0.shape} does not match {P.shape[0]} states")
        if (P < 0).any() or not np.allclose(P.sum(axis=2), 1.0, rtol=0, atol=1e-9):
            raise ValueError("transition rows must be probability distributions")
        if (p0 < 0).any() or abs(p0.sum() - 1.0) > 1e-9:
            raise ValueError("initial distribution must sum to 1")
        if not np.isfinite(R).all():
            raise ValueError("reward must be finite")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError(f"gamma must lie in [0, 1), got {self.gamma}")

    @property
    def n_states(self) -> int:
        return self.transition.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transition.shape[1]


class TabularEnv:
    """Simulator for a :class:`TabularMdp`, states are integer indices.

    The whole state is a single one-hot block. ``absorbing`` lists states
    that end an episode (they must be self-loops with zero reward).
    """

    def __init__(self, mdp: TabularMdp, absorbing: Sequence[int] = ()):
        self.mdp = mdp
        self.n_actions = mdp.n_actions
        self.block_sizes = (mdp.n_states,)
        self.absorbing = frozenset(int(s) for s in absorbing)
        self._cdf = np.cumsum(mdp.transition, axis=2)

    def reset(self, rng):
        return int(rng.choice(self.mdp.n_states, p=self.mdp.initial))

    def step(self, state, action, rng):
        cdf = self._cdf[state, action]
        nxt = int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right"))
        return min(nxt, self.mdp.n_states - 1), float(self.mdp.reward[state, action])

    def is_absorbing(self, state) -> bool:
        return state in self.absorbing

    def components(self, state) -> tuple[int, ...]:
        return (int(state),)

    def from_components(self, comps) -> int:
        return int(comps[0])

    def enumerate_states(self) -> list[int]:
        return list(range(self.mdp.n_states))


@dataclass
class Trajectory:
    """``states`` always holds one more entry than ``actions``.

    ``absorbed`` is set when the last state is absorbing; otherwise the
    trajectory was cut by the step cap.
    """

    states: list
    actions: list[int]
    rewards: list[float]
    absorbed: bool = False

    def __len__(self) -> int:
        return len(self.actions)


@dataclass
class NStepSegment:
    """A window ``s_t .. s_{t+N}`` with actions ``a_t .. a_{t+N-1}``.

    States are stored as component tuples. ``truncated_at`` marks how many
    transitions are valid when the step cap cut the episode inside the
    window; ``absorbed_at`` marks the index of the first absorbing state
    (entries after it repeat that state, which is exact). ``t`` is the time
    index of the head within its episode.
    """

    states: list[tuple[int, ...]]
    actions: list[int]
    reward: float
    horizon: int
    truncated_at: int | None = None
    absorbed_at: int | None = None
    t: int = 0

    def __post_init__(self):
        if len(self.states) != self.horizon + 1 or len(self.actions) != self.horizon:
            raise ValueError("segment needs horizon+1 states and horizon actions")
        if self.truncated_at is not None and not 1 <= self.truncated_at < self.horizon:
            raise ValueError(f"truncated_at={self.truncated_at} outside [1, {self.horizon})")
        if self.truncated_at is not None and self.absorbed_at is not None:
            raise ValueError("a segment cannot be both truncated and absorbed")

    @property
    def valid_steps(self) -> int:
        """Number of transitions after which the window stops carrying real data."""
        if self.truncated_at is not None:
            return self.truncated_at
        return self.horizon

    @property
    def done(self) -> bool:
        """True when the head transition lands in an absorbing state."""
        return self.absorbed_at == 1


@dataclass
class ReplayBuffer:
    capacity: int = DEFAULT_BUFFER_SIZE
    segments: deque = field(default_factory=deque)

    def __post_init__(self):
        if self.capacity < 1:
            raise ValueError("capacity must be positive")
        self.segments = deque(self.segments, maxlen=self.capacity)

    def __len__(self) -> int:
        return len(self.segments)

    def add(self, segment: NStepSegment) -> None:
        self.segments.append(segment)

    def extend(self, segments) -> None:
        self.segments.extend(segments)

    def sample(self, batch: int, rng: np.random.Generator) -> list[NStepSegment]:
        return buffer_sample(self, batch, rng)


def sample_action(probs: np.ndarray, rng: np.random.Generator) -> int:
    cdf = np.cumsum(probs)
    return min(int(np.searchsorted(cdf, rng.random() * cdf[-1], side="right")), len(probs) - 1)


def sample_trajectory(env, policy: PolicyLike, max_steps: int = DEFAULT_MAX_STEPS, rng=None) -> Trajectory:
    """Roll out ``policy`` from a fresh initial state.

    Stops on reaching an absorbing state or after ``max_steps`` actions.
    """
    if max_steps < 1:
        raise ValueError("max_steps must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    state = env.reset(rng)
    states, actions, rewards = [state], [], []
    absorbed = env.is_absorbing(state)
    while not absorbed and len(actions) < max_steps:
        action = sample_action(policy(state), rng)
        state, reward = env.step(state, action, rng)
        states.append(state)
        actions.append(action)
        rewards.append(reward)
        absorbed = env.is_absorbing(state)
    return Trajectory(states, actions, rewards, absorbed)


def discounted_return(traj, gamma: float) -> float:
    """Sum of ``gamma**t * r_t``; accepts a Trajectory or a plain reward sequence."""
    if not 0.0 <= gamma < 1.0:
        raise ValueError(f"gamma must lie in [0, 1), got {gamma}")
    rewards = np.asarray(traj.rewards if isinstance(traj, Trajectory) else traj, dtype=float)
    return float(np.sum(gamma ** np.arange(len(rewards)) * rewards))


def trajectory_segments(env, traj: Trajectory, horizon: int) -> list[NStepSegment]:
    """Sliding windows of ``horizon`` transitions, one headed at every step.

    Windows running past an absorbing state are padded with that state;
    windows running past the step cap carry ``truncated_at``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    comps = [env.components(s) for s in traj.states]
    T = len(traj.actions)
    out = []
    for t in range(T):
        avail = T - t
        if avail >= horizon:
            states = comps[t : t + horizon + 1]
            actions = traj.actions[t : t + horizon]
            truncated = absorbed = None
            if traj.absorbed and avail == horizon:
                absorbed = horizon
        else:
            pad = horizon - avail
            states = comps[t:] + [comps[-1]] * pad
            actions = traj.actions[t:] + [0] * pad
            if traj.absorbed:
                truncated, absorbed = None, avail
            else:
                truncated, absorbed = avail, None
        out.append(
            NStepSegment(list(states), list(actions), traj.rewards[t], horizon, truncated, absorbed, t)
        )
    return out


def collect_segments(env, policy: PolicyLike, n_segments: int, horizon: int, rng, max_steps: int = DEFAULT_MAX_STEPS):
    """Sample fresh trajectories until ``n_segments`` windows are gathered.

    Whole trajectories are consumed, so the result may hold more than
    ``n_segments`` windows.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    out: list[NStepSegment] = []
    trajectories = []
    while len(out) < n_segments:
        traj = sample_trajectory(env, policy, max_steps, rng)
        trajectories.append(traj)
        out.extend(trajectory_segments(env, traj, horizon))
    return out, trajectories


def buffer_sample(buffer: ReplayBuffer, batch: int, rng: np.random.Generator) -> list[NStepSegment]:
    if len(buffer) == 0:
        raise ValueError("cannot sample from an empty replay buffer; collect segments first")
    idx = rng.integers(0, len(buffer), size=batch)
    return [buffer.segments[i] for i in idx]
