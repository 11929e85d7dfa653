"""Cellular-automaton gridworld with an embedded agent.

Boards are small value objects: every operation returns a new board and
leaves its input untouched. Life-rule stepping is delegated to
:mod:`sarlkit._kernels`, which picks a compiled or numpy backend at import.
"""
from __future__ import annotations

import copy
import enum
from dataclasses import dataclass, field

import numpy as np

from sarlkit import _kernels


class CellKind(enum.IntEnum):
    EMPTY = 0
    WALL = 1
    EXIT = 2
    SPAWNER = 3
    GREEN = 4
    RED = 5
    GRAY = 6


LIVING = (CellKind.GREEN, CellKind.RED, CellKind.GRAY)
BLOCKING = (CellKind.WALL, CellKind.SPAWNER)
IMMUTABLE = (CellKind.WALL, CellKind.EXIT, CellKind.SPAWNER)


class Action(enum.IntEnum):
    NOOP = 0
    MOVE_UP = 1
    MOVE_DOWN = 2
    MOVE_LEFT = 3
    MOVE_RIGHT = 4
    TOGGLE_UP = 5
    TOGGLE_DOWN = 6
    TOGGLE_LEFT = 7
    TOGGLE_RIGHT = 8


N_ACTIONS = len(Action)

_DIRECTIONS = {
    Action.MOVE_UP: (-1, 0),
    Action.MOVE_DOWN: (1, 0),
    Action.MOVE_LEFT: (0, -1),
    Action.MOVE_RIGHT: (0, 1),
    Action.TOGGLE_UP: (-1, 0),
    Action.TOGGLE_DOWN: (1, 0),
    Action.TOGGLE_LEFT: (0, -1),
    Action.TOGGLE_RIGHT: (0, 1),
}


class TaskKind(enum.Enum):
    PRUNE = "prune"
    APPEND = "append"


SPAWN_PROBABILITY = 0.3
EXIT_BONUS = 1.0
STEP_COST = 0.01

# Observation channels: the seven CellKind values in enum order, then goals, then agent.
GOAL_CHANNEL = 7
AGENT_CHANNEL = 8
N_CHANNELS = 9


class EpisodeDone(RuntimeError):
    """Raised when stepping an episode that has already terminated."""


class LevelParseError(ValueError):
    def __init__(self, message: str, line: int, column: int = 0):
        super().__init__(f"line {line}, column {column}: {message}")
        self.line = line
        self.column = column


@dataclass
class Board:
    fg: np.ndarray
    goals: np.ndarray
    agent: tuple[int, int] | None
    rng: np.random.Generator | None = field(default=None, compare=False)

    @property
    def height(self) -> int:
        return self.fg.shape[0]

    @property
    def width(self) -> int:
        return self.fg.shape[1]

    def copy(self) -> Board:
        return Board(self.fg.copy(), self.goals, self.agent, _copy_rng(self.rng))

    def without_agent(self) -> Board:
        return Board(self.fg, self.goals, None, self.rng)

    def count(self, kind: CellKind) -> int:
        return int(np.count_nonzero(self.fg == kind))

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Board):
            return NotImplemented
        return (
            self.agent == other.agent
            and np.array_equal(self.fg, other.fg)
            and np.array_equal(self.goals, other.goals)
        )

    __hash__ = None


def _copy_rng(rng):
    return None if rng is None else copy.deepcopy(rng)


def make_board(fg, goals=None, agent=None, seed: int | None = 0) -> Board:
    fg = np.asarray(fg, dtype=np.int8).copy()
    if goals is None:
        goals = np.zeros(fg.shape, dtype=bool)
    goals = np.asarray(goals, dtype=bool).copy()
    goals.flags.writeable = False
    rng = None if seed is None else np.random.default_rng(seed)
    return Board(fg, goals, None if agent is None else tuple(agent), rng)


def _neighbors8(r, c, h, w):
    for dr in (-1, 0, 1):
        for dc in (-1, 0, 1):
            if dr or dc:
                yield (r + dr) % h, (c + dc) % w


def step_cells(board: Board) -> Board:
    """Advance the automaton one synchronous generation, then fire spawners."""
    ar, ac = board.agent if board.agent is not None else (-1, -1)
    fg = _kernels.life_step(board.fg, ar, ac)
    rng = board.rng
    spawners = np.argwhere(board.fg == CellKind.SPAWNER)
    if len(spawners):
        if rng is None:
            raise ValueError("board has spawners but no rng state")
        rng = _copy_rng(rng)
        h, w = fg.shape
        for r, c in spawners:
            # Two draws per spawner per step, whether or not it fires, keep
            # streams aligned between boards that share a seed.
            fire, pick = rng.random(2)
            if fire >= SPAWN_PROBABILITY:
                continue
            empties = [
                (rr, cc)
                for rr, cc in _neighbors8(r, c, h, w)
                if fg[rr, cc] == CellKind.EMPTY and (rr, cc) != board.agent
            ]
            if empties:
                rr, cc = empties[int(pick * len(empties))]
                fg[rr, cc] = CellKind.GREEN
    return Board(fg, board.goals, board.agent, rng)


@dataclass
class ActionEvents:
    destroyed: CellKind | None = None
    created: bool = False
    moved: bool = False
    reached_exit: bool = False


def apply_action(board: Board, action: Action | int) -> tuple[Board, ActionEvents]:
    action = Action(action)
    events = ActionEvents()
    if action == Action.NOOP or board.agent is None:
        return board, events
    h, w = board.fg.shape
    dr, dc = _DIRECTIONS[action]
    r, c = board.agent
    tr, tc = (r + dr) % h, (c + dc) % w
    target = CellKind(board.fg[tr, tc])

    if action <= Action.MOVE_RIGHT:
        if target in BLOCKING:
            return board, events
        fg = board.fg
        if target in LIVING:
            fg = fg.copy()
            fg[tr, tc] = CellKind.EMPTY
            events.destroyed = target
        events.moved = True
        events.reached_exit = target == CellKind.EXIT
        return Board(fg, board.goals, (tr, tc), board.rng), events

    if target == CellKind.EMPTY:
        fg = board.fg.copy()
        fg[tr, tc] = CellKind.GRAY
        events.created = True
    elif target in LIVING:
        fg = board.fg.copy()
        fg[tr, tc] = CellKind.EMPTY
        events.destroyed = target
    else:
        return board, events
    return Board(fg, board.goals, board.agent, board.rng), events


@dataclass
class StepOutcome:
    reward: float
    done: bool
    task_reward: float = 0.0
    red_removed: int = 0
    red_born: int = 0
    goals_gained: int = 0
    reached_exit: bool = False
    destroyed: CellKind | None = None


def on_exit(board: Board) -> bool:
    return board.agent is not None and board.fg[board.agent] == CellKind.EXIT


def covered_goals(board: Board) -> np.ndarray:
    return board.goals & (board.fg == CellKind.GRAY)


def env_step(
    board: Board, action: Action | int, task: TaskKind, t: int, cap: int
) -> tuple[Board, StepOutcome]:
    """One environment step: act, advance the automaton, score the change."""
    if t >= cap or on_exit(board):
        raise EpisodeDone(f"episode already finished at step {t}")
    acted, events = apply_action(board, action)
    after = step_cells(acted)

    out = StepOutcome(reward=-STEP_COST, done=False, destroyed=events.destroyed)
    if task == TaskKind.PRUNE:
        red0 = board.fg == CellKind.RED
        red1 = after.fg == CellKind.RED
        out.red_removed = int(np.count_nonzero(red0 & ~red1))
        out.red_born = int(np.count_nonzero(~red0 & red1))
        out.task_reward = float(out.red_removed - out.red_born)
    else:
        cov0 = covered_goals(board)
        cov1 = covered_goals(after)
        out.goals_gained = int(np.count_nonzero(~cov0 & cov1)) - int(
            np.count_nonzero(cov0 & ~cov1)
        )
        out.task_reward = float(out.goals_gained)
    out.reward += out.task_reward
    out.reached_exit = events.reached_exit
    if events.reached_exit:
        out.reward += EXIT_BONUS
    out.done = events.reached_exit or t + 1 >= cap
    return after, out


def observe(board: Board, centered: bool = False) -> np.ndarray:
    """Stacked one-hot encoding of shape (9, height, width).

    Channels 0-6 follow ``CellKind`` order, 7 is the goal layer, 8 the agent.
    The Empty channel is cleared under the agent. With ``centered`` the grid
    is rolled so the agent sits at (height // 2, width // 2); on a torus this
    loses no information.
    """
    h, w = board.fg.shape
    obs = np.zeros((N_CHANNELS, h, w), dtype=np.float64)
    rows, cols = np.indices((h, w))
    obs[board.fg, rows, cols] = 1.0
    obs[GOAL_CHANNEL] = board.goals
    if board.agent is not None:
        r, c = board.agent
        obs[AGENT_CHANNEL, r, c] = 1.0
        obs[CellKind.EMPTY, r, c] = 0.0
        if centered:
            obs = np.roll(obs, (h // 2 - r, w // 2 - c), axis=(1, 2))
    return obs


# Level text format

_CHARS = {
    ".": CellKind.EMPTY,
    "#": CellKind.WALL,
    "E": CellKind.EXIT,
    "S": CellKind.SPAWNER,
    "g": CellKind.GREEN,
    "r": CellKind.RED,
    "y": CellKind.GRAY,
}
_KIND_CHARS = {v: k for k, v in _CHARS.items()}


def format_level(board: Board) -> str:
    h, w = board.fg.shape
    lines = [f"{w} {h}"]
    for r in range(h):
        row = []
        for c in range(w):
            if board.agent == (r, c):
                if board.fg[r, c] != CellKind.EMPTY:
                    raise ValueError("agent must stand on an empty cell to be saved")
                row.append("A")
            else:
                row.append(_KIND_CHARS[CellKind(board.fg[r, c])])
        lines.append("".join(row))
    for r in range(h):
        lines.append("".join("*" if g else "." for g in board.goals[r]))
    return "\n".join(lines) + "\n"


def parse_level(text: str, seed: int | None = 0) -> Board:
    lines = text.splitlines()
    while lines and not lines[-1].strip():
        lines.pop()
    if not lines:
        raise LevelParseError("empty level file", 1)
    dims = lines[0].split()
    if len(dims) != 2 or not all(d.isdigit() for d in dims):
        raise LevelParseError("header must be 'W H' with two positive integers", 1)
    w, h = int(dims[0]), int(dims[1])
    if w < 1 or h < 1:
        raise LevelParseError(f"bad dimensions {w}x{h}", 1)
    if len(lines) != 1 + 2 * h:
        raise LevelParseError(
            f"expected {2 * h} grid rows after header, found {len(lines) - 1}", len(lines)
        )

    fg = np.zeros((h, w), dtype=np.int8)
    agent = None
    for r in range(h):
        line_no = r + 2
        row = lines[1 + r]
        if len(row) != w:
            raise LevelParseError(f"row {r} has width {len(row)}, expected {w}", line_no)
        for c, ch in enumerate(row):
            if ch == "A":
                if agent is not None:
                    raise LevelParseError("more than one agent", line_no, c + 1)
                agent = (r, c)
            elif ch in _CHARS:
                fg[r, c] = _CHARS[ch]
            else:
                raise LevelParseError(f"unknown cell character {ch!r}", line_no, c + 1)

    goals = np.zeros((h, w), dtype=bool)
    for r in range(h):
        line_no = h + r + 2
        row = lines[1 + h + r]
        if len(row) != w:
            raise LevelParseError(f"goal row {r} has width {len(row)}, expected {w}", line_no)
        for c, ch in enumerate(row):
            if ch not in ".*":
                raise LevelParseError(f"unknown goal character {ch!r}", line_no, c + 1)
            goals[r, c] = ch == "*"
    return make_board(fg, goals, agent, seed=seed)


def render(board: Board) -> str:
    """Human-readable frame: level characters with goals shown as '*' on empty cells."""
    h, w = board.fg.shape
    rows = []
    for r in range(h):
        row = []
        for c in range(w):
            if board.agent == (r, c):
                row.append("A")
            elif board.fg[r, c] == CellKind.EMPTY and board.goals[r, c]:
                row.append("*")
            else:
                row.append(_KIND_CHARS[CellKind(board.fg[r, c])])
        rows.append("".join(row))
    return "\n".join(rows)


class Env:
    """Mutable episode wrapper around the pure step function."""

    def __init__(self, board: Board, task: TaskKind, cap: int):
        self.cap = cap
        self.task = task
        self.reset(board)

    def reset(self, board: Board) -> Board:
        self.initial = board
        self.board = board.copy()
        self.t = 0
        self.done = False
        return self.board

    def step(self, action) -> StepOutcome:
        self.board, outcome = env_step(self.board, action, self.task, self.t, self.cap)
        self.t += 1
        self.done = outcome.done
        return outcome
