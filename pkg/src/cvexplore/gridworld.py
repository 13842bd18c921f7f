"""MiniGrid-style sparse-reward gridworlds with the four-action set.

Coordinates follow MiniGrid: ``x`` grows to the right, ``y`` grows
downward, and the size in an environment name includes the outer wall.
Directions are 0=east, 1=south, 2=west, 3=north.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .mdp import TabularMdp

TURN_LEFT, TURN_RIGHT, FORWARD, STAY = range(4)
ACTION_NAMES = ("turn_left", "turn_right", "forward", "stay")
DIR_VEC = ((1, 0), (0, 1), (-1, 0), (0, -1))
HORIZONTAL, VERTICAL = 0, 1

DEFAULT_STATE_CAP = 4096

Cell = tuple[int, int]


@dataclass(frozen=True)
class GridSpec:
    width: int
    height: int
    walls: frozenset
    passages: tuple = ()  # ((x, y), orientation) pairs
    goal: Cell | None = None  # None means sampled per episode
    start: Cell | None = None  # None means sampled per episode
    start_dir: int | None = 0  # None means sampled per episode
    name: str = "grid"

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValueError("grid dimensions must be positive")
        for cell, _ in self.passages:
            if cell in self.walls:
                raise ValueError(f"passage {cell} sits on a wall cell")
        for label, cell in (("goal", self.goal), ("start", self.start)):
            if cell is not None and (cell in self.walls or not self.in_bounds(cell)):
                raise ValueError(f"{label} {cell} is not a floor cell")

    @property
    def goal_mode(self) -> str:
        return "fixed" if self.goal is not None else "random-per-episode"

    @property
    def start_mode(self) -> str:
        return "fixed" if self.start is not None else "random-per-episode"

    def in_bounds(self, cell: Cell) -> bool:
        return 0 <= cell[0] < self.width and 0 <= cell[1] < self.height

    def floor_cells(self) -> list[Cell]:
        return [
            (x, y)
            for y in range(self.height)
            for x in range(self.width)
            if (x, y) not in self.walls
        ]


@dataclass(frozen=True)
class GridState:
    agent_pos: Cell
    agent_dir: int
    passage_config: tuple = ()
    goal_pos: Cell | None = None


@dataclass
class GridWorld:
    """Environment over a :class:`GridSpec`.

    The goal cell is absorbing: every action taken there keeps the state
    unchanged with zero reward. With ``terminal_goal=False`` the goal is an
    ordinary floor cell (entering it still pays 1); exploration runs, which
    ignore the task reward, use this variant.
    """

    spec: GridSpec
    terminal_goal: bool = True
    n_actions: int = field(default=4, init=False)

    def __post_init__(self):
        self.floor = self.spec.floor_cells()
        self._floor_set = frozenset(self.floor)
        self.goal_in_state = self.spec.goal is None
        W, H = self.spec.width, self.spec.height
        blocks = [W, H, 4]
        for _ in self.spec.passages:
            blocks += [W, H, 2]
        if self.goal_in_state:
            blocks += [W, H]
        self.block_sizes = tuple(blocks)

    # dynamics

    def goal_of(self, state: GridState) -> Cell:
        return state.goal_pos if self.goal_in_state else self.spec.goal

    def is_absorbing(self, state: GridState) -> bool:
        return self.terminal_goal and self.at_goal(state)

    def at_goal(self, state: GridState) -> bool:
        return state.agent_pos == self.goal_of(state)

    def exploration_variant(self) -> "GridWorld":
        return GridWorld(self.spec, terminal_goal=False)

    def step(self, state: GridState, action: int, rng=None) -> tuple[GridState, float]:
        return grid_step(self, state, action)

    def reset(self, rng: np.random.Generator) -> GridState:
        spec = self.spec
        goal = spec.goal
        if goal is None:
            goal = self.floor[rng.integers(len(self.floor))]
        start = spec.start
        if start is None:
            options = [c for c in self.floor if c != goal]
            start = options[rng.integers(len(options))]
        direction = spec.start_dir if spec.start_dir is not None else int(rng.integers(4))
        return GridState(start, direction, spec.passages, goal if self.goal_in_state else None)

    # encodings

    def components(self, state: GridState) -> tuple[int, ...]:
        comps = [state.agent_pos[0], state.agent_pos[1], state.agent_dir]
        for (px, py), orient in state.passage_config:
            comps += [px, py, orient]
        if self.goal_in_state:
            comps += [state.goal_pos[0], state.goal_pos[1]]
        return tuple(int(c) for c in comps)

    def from_components(self, comps) -> GridState:
        comps = list(comps)
        pos, direction = (comps[0], comps[1]), comps[2]
        passages = []
        i = 3
        for _ in self.spec.passages:
            passages.append(((comps[i], comps[i + 1]), comps[i + 2]))
            i += 3
        goal = (comps[i], comps[i + 1]) if self.goal_in_state else None
        return GridState(pos, direction, tuple(passages), goal)

    def encode(self, state: GridState) -> np.ndarray:
        return encode_state(self, state)

    def decode(self, vector: np.ndarray) -> GridState:
        comps, offset = [], 0
        for size in self.block_sizes:
            block = vector[offset : offset + size]
            comps.append(int(np.argmax(block)))
            offset += size
        return self.from_components(comps)

    def enumerate_states(self) -> list[GridState]:
        goals = self.floor if self.goal_in_state else [None]
        out = []
        for goal in goals:
            for pos in self.floor:
                for d in range(4):
                    out.append(GridState(pos, d, self.spec.passages, goal))
        return out

    def initial_distribution(self) -> dict[GridState, float]:
        spec = self.spec
        goals = self.floor if self.goal_in_state else [spec.goal]
        dirs = [spec.start_dir] if spec.start_dir is not None else list(range(4))
        out: dict[GridState, float] = {}
        for goal in goals:
            starts = [spec.start] if spec.start is not None else [c for c in self.floor if c != goal]
            w = 1.0 / (len(goals) * len(starts) * len(dirs))
            for start in starts:
                for d in dirs:
                    s = GridState(start, d, spec.passages, goal if self.goal_in_state else None)
                    out[s] = out.get(s, 0.0) + w
        return out

    def n_floor(self) -> int:
        return len(self.floor)


def grid_step(env: GridWorld, state: GridState, action: int) -> tuple[GridState, float]:
    """Deterministic transition; reward 1 on first arrival at the goal."""
    if env.is_absorbing(state):
        return state, 0.0
    pos, direction = state.agent_pos, state.agent_dir
    if action == TURN_LEFT:
        direction = (direction - 1) % 4
    elif action == TURN_RIGHT:
        direction = (direction + 1) % 4
    elif action == FORWARD:
        dx, dy = DIR_VEC[direction]
        target = (pos[0] + dx, pos[1] + dy)
        if target in env._floor_set:
            pos = target
    elif action != STAY:
        raise ValueError(f"unknown action {action}")
    nxt = GridState(pos, direction, state.passage_config, state.goal_pos)
    return nxt, 1.0 if env.at_goal(nxt) else 0.0


def encode_state(env: GridWorld, state: GridState) -> np.ndarray:
    """Concatenated one-hot blocks: x, y, direction, passages, goal."""
    vec = np.zeros(sum(env.block_sizes))
    offset = 0
    for size, c in zip(env.block_sizes, env.components(state)):
        vec[offset + c] = 1.0
        offset += size
    return vec


def position_feature(state: GridState, action: int | None = None) -> Cell:
    return state.agent_pos


def to_tabular(env: GridWorld, gamma: float, state_cap: int = DEFAULT_STATE_CAP):
    """Enumerate ``env`` into a :class:`TabularMdp`.

    Returns ``(mdp, states)`` where ``states[i]`` is the GridState of index i.
    """
    n = len(env.floor) * 4 * (len(env.floor) if env.goal_in_state else 1)
    if n > state_cap:
        raise ValueError(f"{env.spec.name}: {n} enumerated states exceed the cap of {state_cap}")
    states = env.enumerate_states()
    index = {s: i for i, s in enumerate(states)}
    S = len(states)
    P = np.zeros((S, 4, S))
    R = np.zeros((S, 4))
    for i, s in enumerate(states):
        for a in range(4):
            nxt, r = grid_step(env, s, a)
            P[i, a, index[nxt]] = 1.0
            R[i, a] = r
    p0 = np.zeros(S)
    for s, w in env.initial_distribution().items():
        p0[index[s]] += w
    return TabularMdp(P, R, p0, gamma), states


# layouts


def _border(width: int, height: int) -> set:
    walls = set()
    for x in range(width):
        walls |= {(x, 0), (x, height - 1)}
    for y in range(height):
        walls |= {(0, y), (width - 1, y)}
    return walls


def _connected(spec_walls: set, width: int, height: int, a: Cell, b: Cell) -> bool:
    seen, todo = {a}, deque([a])
    while todo:
        x, y = todo.popleft()
        if (x, y) == b:
            return True
        for dx, dy in DIR_VEC:
            c = (x + dx, y + dy)
            if 0 <= c[0] < width and 0 <= c[1] < height and c not in spec_walls and c not in seen:
                seen.add(c)
                todo.append(c)
    return False


def empty_grid(size: int) -> GridSpec:
    return GridSpec(size, size, frozenset(_border(size, size)), (), (size - 2, size - 2), (1, 1), 0, f"Empty-{size}x{size}")


def simple_crossing(size: int, n_walls: int, seed: int = 0) -> GridSpec:
    """Open grid split by ``n_walls`` straight walls, each with one passage.

    Wall lines and passage cells are drawn once from ``seed``; layouts with
    no start-to-goal path are redrawn.
    """
    if size < 5 or n_walls < 1:
        raise ValueError("SimpleCrossing needs size >= 5 and at least one wall")
    rng = np.random.default_rng(seed)
    start, goal = (1, 1), (size - 2, size - 2)
    lines = [(o, k) for o in (VERTICAL, HORIZONTAL) for k in range(2, size - 2, 2)]
    if n_walls > len(lines):
        raise ValueError(f"at most {len(lines)} walls fit in a {size}x{size} crossing")
    for _ in range(1000):
        walls = _border(size, size)
        chosen = [lines[i] for i in rng.choice(len(lines), size=n_walls, replace=False)]
        for orient, k in chosen:
            for j in range(1, size - 1):
                walls.add((k, j) if orient == VERTICAL else (j, k))
        def on_line(cell, orient, k):
            return cell[0] == k if orient == VERTICAL else cell[1] == k

        passages = []
        for orient, k in chosen:
            cells = [(k, j) if orient == VERTICAL else (j, k) for j in range(1, size - 1)]
            # a gap where two walls cross would open both
            cells = [c for c in cells if sum(on_line(c, o, kk) for o, kk in chosen) == 1]
            if cells:
                passages.append((cells[rng.integers(len(cells))], orient))
        for cell, _ in passages:
            walls.discard(cell)
        if len(passages) == n_walls and start not in walls and goal not in walls and _connected(walls, size, size, start, goal):
            return GridSpec(size, size, frozenset(walls), tuple(passages), goal, start, 0, f"SimpleCrossingS{size}N{n_walls}")
    raise RuntimeError("could not draw a connected crossing layout")


def four_rooms(size: int = 19, seed: int = 0) -> GridSpec:
    """Four rooms joined by one door per inner wall; goal and start random per episode."""
    rng = np.random.default_rng(seed)
    walls = _border(size, size)
    mid = size // 2
    for j in range(size):
        walls.add((mid, j))
        walls.add((j, mid))
    passages = []
    # two doors in the vertical wall (above/below the middle), two in the horizontal
    for lo, hi in ((1, mid), (mid + 1, size - 1)):
        j = int(rng.integers(lo, hi))
        passages.append(((mid, j), VERTICAL))
    for lo, hi in ((1, mid), (mid + 1, size - 1)):
        j = int(rng.integers(lo, hi))
        passages.append(((j, mid), HORIZONTAL))
    for cell, _ in passages:
        walls.discard(cell)
    return GridSpec(size, size, frozenset(walls), tuple(passages), None, None, None, "FourRooms")


def load_map(path: str | Path, name: str | None = None) -> GridSpec:
    """Read a plain-text layout: '#' wall, '.' floor, 'G' goal, 'S' start."""
    lines = [ln.rstrip("\n") for ln in Path(path).read_text().splitlines() if ln.strip()]
    return parse_map(lines, name or Path(path).stem)


def parse_map(lines: list[str], name: str = "map") -> GridSpec:
    height, width = len(lines), max(len(ln) for ln in lines)
    walls, goal, start = set(), None, None
    for y, line in enumerate(lines):
        for x, ch in enumerate(line.ljust(width, "#")):
            if ch == "#":
                walls.add((x, y))
            elif ch == "G":
                goal = (x, y)
            elif ch == "S":
                start = (x, y)
            elif ch != ".":
                raise ValueError(f"unknown map character {ch!r} at ({x}, {y})")
    if goal is None:
        raise ValueError("map has no goal cell 'G'")
    return GridSpec(width, height, frozenset(walls), (), goal, start, 0 if start is not None else None, name)


ENV_BUILDERS = {
    "Empty-4x4": lambda seed: empty_grid(4),
    "Empty-5x5": lambda seed: empty_grid(5),
    "Empty-6x6": lambda seed: empty_grid(6),
    "Empty-8x8": lambda seed: empty_grid(8),
    "Empty-16x16": lambda seed: empty_grid(16),
    "SimpleCrossingS9N1": lambda seed: simple_crossing(9, 1, seed),
    "SimpleCrossingS11N1": lambda seed: simple_crossing(11, 1, seed),
    "SimpleCrossingS11N2": lambda seed: simple_crossing(11, 2, seed),
    "SimpleCrossingS15N1": lambda seed: simple_crossing(15, 1, seed),
    "FourRooms": lambda seed: four_rooms(19, seed),
}


def make_env(env_id: str, seed: int = 0) -> GridWorld:
    """Build a registered environment, or load a map file when ``env_id`` is a path."""
    if env_id in ENV_BUILDERS:
        return GridWorld(ENV_BUILDERS[env_id](seed))
    if Path(env_id).is_file():
        return GridWorld(load_map(env_id))
    raise KeyError(f"unknown environment {env_id!r}; known: {', '.join(sorted(ENV_BUILDERS))}")


def env_ids() -> list[str]:
    return sorted(ENV_BUILDERS)

