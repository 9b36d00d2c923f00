"""Key-door gridworld mazes with sparse rewards, plus a BFS oracle.

Coordinates are ``(x, y)`` with ``x`` the column and ``y`` the row counted
from the top. Actions are 0=up, 1=right, 2=down, 3=left.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import ConfigurationError, OracleError, UsageError

Cell = tuple[int, int]

UP, RIGHT, DOWN, LEFT = 0, 1, 2, 3
N_ACTIONS = 4
ACTION_NAMES = ("up", "right", "down", "left")
MOVES: tuple[Cell, ...] = ((0, -1), (1, 0), (0, 1), (-1, 0))
OBS_DIM = 9
DEFAULT_MAX_STEPS = 200
MAZE_DIR = Path(__file__).parent / "mazes"
_HEADER = "maze v1"


@dataclass(frozen=True)
class MazeLayout:
    width: int
    height: int
    walls: frozenset[Cell]
    start: Cell
    key: Cell
    door: Cell
    goal: Cell
    name: str = ""

    def in_bounds(self, cell: Cell) -> bool:
        x, y = cell
        return 0 <= x < self.width and 0 <= y < self.height

    def is_free(self, cell: Cell) -> bool:
        return self.in_bounds(cell) and cell not in self.walls

    def free_cells(self) -> list[Cell]:
        return [(x, y) for y in range(self.height) for x in range(self.width) if (x, y) not in self.walls]

    def validate(self) -> None:
        if self.width < 2 or self.height < 2:
            raise ConfigurationError(f"{self.name or 'maze'}: grid must be at least 2x2")
        points = {"start": self.start, "key": self.key, "door": self.door, "goal": self.goal}
        for label, cell in points.items():
            if not self.in_bounds(cell):
                raise ConfigurationError(f"{self.name or 'maze'}: {label} {cell} out of bounds")
            if cell in self.walls:
                raise ConfigurationError(f"{self.name or 'maze'}: {label} {cell} is on a wall")
        if len(set(points.values())) != 4:
            raise ConfigurationError(f"{self.name or 'maze'}: start, key, door and goal must be distinct")
        # the key has to be collectable before the door opens
        locked = _bfs_distances(self, self.start, door_open=False)
        if self.key not in locked:
            raise ConfigurationError(f"{self.name or 'maze'}: key unreachable from start")
        opened = _bfs_distances(self, self.key, door_open=True)
        if self.door not in opened:
            raise ConfigurationError(f"{self.name or 'maze'}: door unreachable from key")
        if self.goal not in _bfs_distances(self, self.door, door_open=True):
            raise ConfigurationError(f"{self.name or 'maze'}: goal unreachable from door")


@dataclass(frozen=True)
class TaskSpec:
    layout: MazeLayout
    max_steps: int = DEFAULT_MAX_STEPS

    @property
    def name(self) -> str:
        return self.layout.name


@dataclass
class StepResult:
    next_obs: np.ndarray
    reward: float
    done: bool
    truncated: bool


def parse_layout(text: str, name: str = "") -> MazeLayout:
    lines = [ln.rstrip("\r") for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ConfigurationError(f"{name or 'maze'}: empty layout")
    header = lines[0].split()
    if len(header) != 4 or " ".join(header[:2]) != _HEADER:
        raise ConfigurationError(f"{name or 'maze'}: expected header '{_HEADER} <width> <height>'")
    try:
        width, height = int(header[2]), int(header[3])
    except ValueError as exc:
        raise ConfigurationError(f"{name or 'maze'}: bad header {lines[0]!r}") from exc
    rows = lines[1:]
    if len(rows) != height or any(len(r) != width for r in rows):
        raise ConfigurationError(f"{name or 'maze'}: grid does not match {width}x{height}")
    walls: set[Cell] = set()
    marks: dict[str, Cell] = {}
    for y, row in enumerate(rows):
        for x, ch in enumerate(row):
            if ch == "#":
                walls.add((x, y))
            elif ch in "SKDG":
                if ch in marks:
                    raise ConfigurationError(f"{name or 'maze'}: duplicate '{ch}'")
                marks[ch] = (x, y)
            elif ch != ".":
                raise ConfigurationError(f"{name or 'maze'}: unknown character {ch!r}")
    missing = [c for c in "SKDG" if c not in marks]
    if missing:
        raise ConfigurationError(f"{name or 'maze'}: missing {''.join(missing)}")
    layout = MazeLayout(width, height, frozenset(walls), marks["S"], marks["K"], marks["D"], marks["G"], name)
    layout.validate()
    return layout


def format_layout(layout: MazeLayout) -> str:
    special = {layout.start: "S", layout.key: "K", layout.door: "D", layout.goal: "G"}
    rows = [f"{_HEADER} {layout.width} {layout.height}"]
    for y in range(layout.height):
        rows.append("".join(
            "#" if (x, y) in layout.walls else special.get((x, y), ".") for x in range(layout.width)
        ))
    return "\n".join(rows) + "\n"


def load_layout(path: str | Path) -> MazeLayout:
    path = Path(path)
    return parse_layout(path.read_text(), name=path.stem)


def resolve_task(ref: str | Path, search_dir: str | Path | None = None, max_steps: int = DEFAULT_MAX_STEPS) -> TaskSpec:
    """Turn a layout file path or a bare name like ``maze3`` into a task."""
    path = Path(ref)
    if not path.suffix and not path.exists():
        path = Path(search_dir or MAZE_DIR) / f"{ref}.maze"
    if not path.exists():
        raise FileNotFoundError(path)
    return TaskSpec(load_layout(path), max_steps)


def make_suite(refs: Iterable[str | Path], search_dir: str | Path | None = None,
               max_steps: int = DEFAULT_MAX_STEPS) -> list[TaskSpec]:
    tasks = [resolve_task(r, search_dir, max_steps) for r in refs]
    check_uniform(tasks)
    return tasks


def check_uniform(tasks: Sequence[TaskSpec]) -> None:
    if not tasks:
        raise ConfigurationError("suite needs at least one task")
    shapes = {(t.layout.width, t.layout.height) for t in tasks}
    if len(shapes) != 1:
        raise ConfigurationError(f"suite mixes grid shapes {sorted(shapes)}")


def encode(layout: MazeLayout, cell: Cell, has_key: bool) -> np.ndarray:
    sx = 1.0 / (layout.width - 1)
    sy = 1.0 / (layout.height - 1)
    return np.array([
        cell[0] * sx, cell[1] * sy, float(has_key),
        layout.key[0] * sx, layout.key[1] * sy,
        layout.door[0] * sx, layout.door[1] * sy,
        layout.goal[0] * sx, layout.goal[1] * sy,
    ])


class MazeEnv:
    """One task instance. Movement is deterministic."""

    def __init__(self, task: TaskSpec):
        task.layout.validate()
        self.task = task
        self.layout = task.layout
        self.pos: Cell = self.layout.start
        self.has_key = False
        self.t = 0
        self.finished = True

    def reset(self, seed: int | None = None) -> np.ndarray:
        # dynamics are deterministic, the seed only exists for interface symmetry
        self.pos = self.layout.start
        self.has_key = False
        self.t = 0
        self.finished = False
        return self.observe()

    def observe(self) -> np.ndarray:
        return encode(self.layout, self.pos, self.has_key)

    def step(self, action: int) -> StepResult:
        if self.finished:
            raise UsageError("step() called on a finished episode; call reset()")
        if not 0 <= int(action) < N_ACTIONS:
            raise UsageError(f"action {action} outside 0..{N_ACTIONS - 1}")
        dx, dy = MOVES[int(action)]
        nxt = (self.pos[0] + dx, self.pos[1] + dy)
        if self.layout.is_free(nxt) and (nxt != self.layout.door or self.has_key):
            self.pos = nxt
        if self.pos == self.layout.key:
            self.has_key = True
        self.t += 1
        reward, done, truncated = 0.0, False, False
        if self.has_key and self.pos == self.layout.goal:
            reward, done = 1.0, True
        elif self.t >= self.task.max_steps:
            truncated = True
        self.finished = done or truncated
        return StepResult(self.observe(), reward, done, truncated)


def reset(task: TaskSpec, seed: int = 0) -> tuple[MazeEnv, np.ndarray]:
    env = MazeEnv(task)
    return env, env.reset(seed)


def _bfs_distances(layout: MazeLayout, source: Cell, door_open: bool) -> dict[Cell, int]:
    dist = {source: 0}
    queue = deque([source])
    while queue:
        cur = queue.popleft()
        for dx, dy in MOVES:
            nxt = (cur[0] + dx, cur[1] + dy)
            if nxt in dist or not layout.is_free(nxt):
                continue
            if nxt == layout.door and not door_open:
                continue
            dist[nxt] = dist[cur] + 1
            queue.append(nxt)
    return dist


def subgoal_distances(layout: MazeLayout, has_key: bool) -> dict[Cell, int]:
    """Shortest-path distance from every cell to the current subgoal.

    Without the key the subgoal is the key and the door is closed; with the
    key it is the goal and the door is open. Moves are reversible, so a BFS
    from the subgoal gives distances to it.
    """
    if has_key:
        return _bfs_distances(layout, layout.goal, door_open=True)
    return _bfs_distances(layout, layout.key, door_open=False)


def reachable_states(layout: MazeLayout, has_key: bool) -> set[Cell]:
    """Cells an agent can actually occupy with the given key flag."""
    if has_key:
        return set(_bfs_distances(layout, layout.key, door_open=True))
    cells = set(_bfs_distances(layout, layout.start, door_open=False))
    cells.discard(layout.key)
    return cells


def shortest_path_action(task: TaskSpec | MazeLayout, cell: Cell, has_key: bool,
                         _dist: dict[Cell, int] | None = None) -> set[int]:
    layout = task.layout if isinstance(task, TaskSpec) else task
    if not layout.is_free(cell):
        raise OracleError(f"{cell} is not a free cell")
    dist = subgoal_distances(layout, has_key) if _dist is None else _dist
    if cell not in dist:
        raise OracleError(f"{cell} cannot reach the subgoal (has_key={has_key})")
    here = dist[cell]
    if here == 0:
        return set()
    best = set()
    for a, (dx, dy) in enumerate(MOVES):
        nxt = (cell[0] + dx, cell[1] + dy)
        if dist.get(nxt, here) == here - 1:
            best.add(a)
    return best


def bfs_policy_action(env: MazeEnv) -> int:
    """Lowest-index shortest-path move from the env's current state."""
    return min(shortest_path_action(env.layout, env.pos, env.has_key))
