import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import life_oracle
from sarlkit.grid import CellKind as K, LevelParseError, TaskKind, format_level, step_cells
from sarlkit.levelgen import (
    STILL_LIFES, LevelSpec, build_test_bank, generate_level, load_level, read_bank,
    save_level, write_bank,
)


def torus_l1(a, b, h, w):
    dr, dc = abs(a[0] - b[0]), abs(a[1] - b[1])
    return min(dr, h - dr) + min(dc, w - dc)


def test_same_spec_same_board():
    spec = LevelSpec(TaskKind.PRUNE, False, seed=42)
    a, b = generate_level(spec), generate_level(spec)
    assert a == b
    assert format_level(a) == format_level(b)


def test_prune_still_seed7_contract():
    b = generate_level(LevelSpec(TaskKind.PRUNE, False, 10, 10, seed=7, n_pattern_cells=8))
    assert b.count(K.RED) >= 1
    assert b.count(K.SPAWNER) == 0
    assert np.array_equal(life_oracle(b.fg.tolist()), b.fg)


def test_append_dynamic_spawners():
    b = generate_level(LevelSpec(TaskKind.APPEND, True, 12, 12, seed=3, n_spawners=2))
    assert b.count(K.SPAWNER) == 2
    assert b.goals.sum() >= 1


def test_template_library_is_still():
    for name, shapes in STILL_LIFES.items():
        for cells in shapes:
            fg = np.zeros((8, 8), np.int8)
            for r, c in cells:
                fg[r + 2, c + 2] = K.GREEN
            assert np.array_equal(life_oracle(fg.tolist()), fg), name


@settings(max_examples=40, deadline=None)
@given(st.sampled_from(list(TaskKind)), st.booleans(), st.integers(0, 10**6), st.integers(8, 12))
def test_level_invariants(task, dynamic, seed, size):
    spec = LevelSpec(task, dynamic, size, size, seed=seed, n_spawners=1 if dynamic else 0)
    b = generate_level(spec)
    assert b.count(K.EXIT) == 1
    assert b.agent is not None and b.fg[b.agent] == K.EMPTY
    exit_pos = tuple(np.argwhere(b.fg == K.EXIT)[0])
    assert torus_l1(b.agent, exit_pos, size, size) >= size / 2
    if task == TaskKind.PRUNE:
        assert b.count(K.RED) >= 1
    else:
        assert b.goals.any()
        # every marker sits on an empty cell that a toggle can fill
        assert (b.fg[b.goals] == K.EMPTY).all()
    if not dynamic:
        assert b.count(K.SPAWNER) == 0
        assert step_cells(b) == b


def test_append_goal_toggle_completes_still_life():
    b = generate_level(LevelSpec(TaskKind.APPEND, False, 10, 10, seed=5))
    fg = b.fg.copy()
    fg[b.goals] = K.GRAY
    stepped = life_oracle(fg.tolist())
    assert np.array_equal(stepped, fg)


def test_bank_of_100_distinct():
    bank = build_test_bank(TaskKind.PRUNE, False, 100, 10_000)
    texts = {format_level(b) for b in bank}
    assert len(texts) == 100


def test_singleton_bank_matches_generate():
    bank = build_test_bank(TaskKind.APPEND, False, 1, 10_000)
    assert bank == [generate_level(LevelSpec(TaskKind.APPEND, False, seed=10_000))]


def test_train_and_test_ranges_disjoint():
    test = {format_level(b) for b in build_test_bank(TaskKind.PRUNE, False, 100, 10_000)}
    train = {format_level(generate_level(LevelSpec(TaskKind.PRUNE, False, seed=s))) for s in range(0, 10_000, 50)}
    assert not test & train


def test_bank_size_zero_rejected():
    with pytest.raises(ValueError):
        build_test_bank(TaskKind.PRUNE, False, 0, 0)


@pytest.mark.parametrize("spec", [
    LevelSpec(width=5, height=10),
    LevelSpec(dynamic=False, n_spawners=1),
    LevelSpec(n_pattern_cells=0),
    LevelSpec(task=TaskKind.APPEND, n_goal_markers=0),
    LevelSpec(width=6, height=6, n_pattern_cells=30),
])
def test_invalid_specs(spec):
    with pytest.raises(ValueError):
        generate_level(spec)


def test_save_load_roundtrip(tmp_path):
    b = generate_level(LevelSpec(TaskKind.APPEND, True, 10, 10, seed=9, n_spawners=1))
    save_level(b, tmp_path / "l.txt")
    assert load_level(tmp_path / "l.txt") == b


def test_load_wrong_width_names_row(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("4 2\n....\n...\n....\n....\n")
    with pytest.raises(LevelParseError, match="row 1"):
        load_level(path)


def test_write_bank_is_idempotent(tmp_path):
    spec = LevelSpec(TaskKind.PRUNE, True, 8, 8, n_spawners=1)
    m1 = write_bank(tmp_path / "a", spec, 5, 100)
    m2 = write_bank(tmp_path / "b", spec, 5, 100)
    for name in sorted(p.name for p in m1.parent.iterdir()):
        assert (m1.parent / name).read_bytes() == (m2.parent / name).read_bytes()
    manifest = json.loads(m1.read_text())
    assert [e["seed"] for e in manifest["levels"]] == list(range(100, 105))


def test_read_bank_restores_spawner_streams(tmp_path):
    spec = LevelSpec(TaskKind.PRUNE, True, 8, 8, n_spawners=1)
    manifest = write_bank(tmp_path, spec, 3, 500)
    _, boards = read_bank(manifest)
    direct = build_test_bank(TaskKind.PRUNE, True, 3, 500, width=8, height=8)
    for a, b in zip(boards, direct):
        for _ in range(10):
            a, b = step_cells(a), step_cells(b)
            assert a == b
