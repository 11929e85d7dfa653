"""Procedural prune/append levels from a still-life template library."""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from sarlkit.grid import Board, CellKind, TaskKind, format_level, parse_level, step_cells

MAX_RESAMPLES = 100
_PLACEMENT_TRIES = 60


class LevelGenerationError(RuntimeError):
    pass


def _orientations(cells):
    """All distinct rotations and reflections of a cell set, normalized to the origin."""
    out = []
    pts = list(cells)
    for flip in (False, True):
        cur = [(r, -c) for r, c in pts] if flip else pts
        for _ in range(4):
            cur = [(c, -r) for r, c in cur]
            r0 = min(r for r, _ in cur)
            c0 = min(c for _, c in cur)
            norm = tuple(sorted((r - r0, c - c0) for r, c in cur))
            if norm not in out:
                out.append(norm)
    return out


STILL_LIFES = {
    "block": _orientations([(0, 0), (0, 1), (1, 0), (1, 1)]),
    "beehive": _orientations([(0, 1), (0, 2), (1, 0), (1, 3), (2, 1), (2, 2)]),
    "loaf": _orientations([(0, 1), (0, 2), (1, 0), (1, 3), (2, 1), (2, 3), (3, 2)]),
    "boat": _orientations([(0, 0), (0, 1), (1, 0), (1, 2), (2, 1)]),
    "tub": _orientations([(0, 1), (1, 0), (1, 2), (2, 1)]),
}
OSCILLATORS = {
    "blinker": _orientations([(0, 0), (0, 1), (0, 2)]),
    "toad": _orientations([(0, 1), (0, 2), (0, 3), (1, 0), (1, 1), (1, 2)]),
}
# A tub becomes a boat (then a ship) when a corner of its 3x3 box is filled,
# so one toggle per marker completes a still life. Keeps append solvable.
_TUB = ((0, 1), (1, 0), (1, 2), (2, 1))
_TUB_MARKERS = ((0, 0), (2, 2))


@dataclass(frozen=True)
class LevelSpec:
    task: TaskKind = TaskKind.PRUNE
    dynamic: bool = False
    width: int = 10
    height: int = 10
    seed: int = 0
    n_pattern_cells: int = 8
    n_goal_markers: int = 2
    n_spawners: int = 0

    def validate(self) -> None:
        if self.width < 6 or self.height < 6:
            raise ValueError("levels must be at least 6x6")
        if not self.dynamic and self.n_spawners:
            raise ValueError("still levels cannot have spawners")
        if self.n_pattern_cells < 1:
            raise ValueError("n_pattern_cells must be positive")
        if self.task == TaskKind.APPEND and self.n_goal_markers < 1:
            raise ValueError("append levels need at least one goal marker")
        if self.n_pattern_cells + self.n_spawners + 2 > self.width * self.height // 2:
            raise ValueError("requested content does not fit on the board")


class _Canvas:
    def __init__(self, h, w, rng):
        self.h, self.w = h, w
        self.rng = rng
        self.fg = np.zeros((h, w), dtype=np.int8)
        self.goals = np.zeros((h, w), dtype=bool)
        # Bounding boxes of placed content, and those boxes grown by one cell.
        self.reserved = np.zeros((h, w), dtype=bool)
        self.halo = np.zeros((h, w), dtype=bool)

    def _box(self, r, c, bh, bw, margin):
        rows = [(r + i) % self.h for i in range(-margin, bh + margin)]
        cols = [(c + j) % self.w for j in range(-margin, bw + margin)]
        return np.ix_(rows, cols)

    def place(self, cells, kind, markers=()):
        bh = max(r for r, _ in cells) + 1
        bw = max(c for _, c in cells) + 1
        if bh + 2 > self.h or bw + 2 > self.w:
            return False
        for _ in range(_PLACEMENT_TRIES):
            r = int(self.rng.integers(self.h))
            c = int(self.rng.integers(self.w))
            if self.reserved[self._box(r, c, bh, bw, 1)].any():
                continue
            for dr, dc in cells:
                self.fg[(r + dr) % self.h, (c + dc) % self.w] = kind
            for dr, dc in markers:
                self.goals[(r + dr) % self.h, (c + dc) % self.w] = True
            self.reserved[self._box(r, c, bh, bw, 0)] = True
            self.halo[self._box(r, c, bh, bw, 1)] = True
            return True
        return False

    def free_cells(self, avoid_halo=True):
        mask = self.fg == CellKind.EMPTY
        if avoid_halo:
            mask &= ~self.halo
        return [tuple(int(x) for x in p) for p in np.argwhere(mask)]


def _torus_l1(a, b, h, w):
    dr = abs(a[0] - b[0])
    dc = abs(a[1] - b[1])
    return min(dr, h - dr) + min(dc, w - dc)


def _pick(rng, items):
    return items[int(rng.integers(len(items)))]


def _attempt(spec: LevelSpec, rng) -> Board | None:
    cv = _Canvas(spec.height, spec.width, rng)
    placed_cells = 0

    if spec.task == TaskKind.APPEND:
        n_tubs = math.ceil(spec.n_goal_markers / 2)
        for i in range(n_tubs):
            markers = _TUB_MARKERS if 2 * (i + 1) <= spec.n_goal_markers else _TUB_MARKERS[:1]
            if not cv.place(_TUB, CellKind.GRAY, markers):
                return None
            placed_cells += len(_TUB)

    library = dict(STILL_LIFES)
    if spec.dynamic:
        library.update(OSCILLATORS)
    names = sorted(library)
    i = 0
    while placed_cells < spec.n_pattern_cells:
        if spec.task == TaskKind.PRUNE:
            kind = CellKind.RED if i == 0 else CellKind.GREEN if i == 1 else (
                CellKind.RED if rng.random() < 0.5 else CellKind.GREEN
            )
        else:
            kind = CellKind.GREEN
        cells = _pick(rng, library[_pick(rng, names)])
        if not cv.place(cells, kind):
            return None
        placed_cells += len(cells)
        i += 1

    for _ in range(spec.n_spawners):
        if not cv.place([(0, 0)], CellKind.SPAWNER):
            return None

    free = cv.free_cells() or cv.free_cells(avoid_halo=False)
    if not free:
        return None
    agent = _pick(rng, free)
    min_dist = max(spec.width, spec.height) / 2
    exits = [
        p for p in cv.free_cells(avoid_halo=False)
        if p != agent and _torus_l1(p, agent, spec.height, spec.width) >= min_dist
    ]
    if not exits:
        return None
    exit_pos = _pick(rng, exits)
    cv.fg[exit_pos] = CellKind.EXIT

    if spec.task == TaskKind.PRUNE and not (cv.fg == CellKind.RED).any():
        return None
    if spec.task == TaskKind.APPEND and not cv.goals.any():
        return None

    goals = cv.goals.copy()
    goals.flags.writeable = False
    board = Board(cv.fg, goals, agent, None)
    if not spec.dynamic:
        # Reject anything that is not a fixed point of the rules.
        if not np.array_equal(step_cells(board.without_agent()).fg, board.fg):
            return None
    return board


def generate_level(spec: LevelSpec) -> Board:
    """Build a level deterministically from ``spec.seed``."""
    spec.validate()
    layout_seq, spawn_seq = np.random.SeedSequence(spec.seed & (2**64 - 1)).spawn(2)
    rng = np.random.default_rng(layout_seq)
    for _ in range(MAX_RESAMPLES):
        board = _attempt(spec, rng)
        if board is not None:
            board.rng = np.random.default_rng(spawn_seq)
            return board
    raise LevelGenerationError(f"no valid level for {spec} after {MAX_RESAMPLES} attempts")


def build_test_bank(
    task: TaskKind, dynamic: bool, n: int, base_seed: int, **spec_kwargs
) -> list[Board]:
    if n < 1:
        raise ValueError("bank size must be at least 1")
    if dynamic:
        spec_kwargs.setdefault("n_spawners", 1)
    base = LevelSpec(task=task, dynamic=dynamic, **spec_kwargs)
    return [generate_level(replace(base, seed=base_seed + i)) for i in range(n)]


def save_level(board: Board, path) -> None:
    Path(path).write_text(format_level(board))


def load_level(path, seed: int = 0) -> Board:
    return parse_level(Path(path).read_text(), seed=seed)


def spec_to_dict(spec: LevelSpec) -> dict:
    d = asdict(spec)
    d["task"] = spec.task.value
    return d


def write_bank(directory, spec: LevelSpec, n: int, base_seed: int) -> Path:
    """Generate ``n`` levels into ``directory`` plus a ``manifest.json``; returns the manifest path."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(n):
        seed = base_seed + i
        board = generate_level(replace(spec, seed=seed))
        name = f"level_{seed:06d}.txt"
        save_level(board, directory / name)
        entries.append({"path": name, "seed": seed})
    manifest = {"spec": spec_to_dict(replace(spec, seed=base_seed)), "levels": entries}
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def read_bank(manifest_path) -> tuple[dict, list[Board]]:
    """Load a bank; each level's spawner rng is re-seeded from its recorded seed."""
    manifest_path = Path(manifest_path)
    manifest = json.loads(manifest_path.read_text())
    boards = []
    for entry in manifest["levels"]:
        spawn_seq = np.random.SeedSequence(entry["seed"] & (2**64 - 1)).spawn(2)[1]
        board = load_level(manifest_path.parent / entry["path"])
        board.rng = np.random.default_rng(spawn_seq)
        boards.append(board)
    return manifest, boards
