"""Hot-loop kernels with a compiled backend and a numpy fallback.

The compiled extension ``sarlkit._life`` is used when it imports cleanly.
Set ``SARLKIT_PURE=1`` to force the numpy path.
"""
from __future__ import annotations

import os

import numpy as np

EMPTY, GREEN, RED, GRAY = 0, 4, 5, 6


def life_step_numpy(fg: np.ndarray, agent_r: int, agent_c: int) -> np.ndarray:
    green = (fg == GREEN).astype(np.int8)
    red = (fg == RED).astype(np.int8)
    gray = (fg == GRAY).astype(np.int8)

    def neighbors(a):
        total = np.zeros_like(a)
        for dr in (-1, 0, 1):
            for dc in (-1, 0, 1):
                if dr or dc:
                    total += np.roll(a, (dr, dc), axis=(0, 1))
        return total

    ng, nr, ny = neighbors(green), neighbors(red), neighbors(gray)
    n = ng + nr + ny
    alive = (green | red | gray).astype(bool)

    out = fg.copy()
    out[alive & ((n < 2) | (n > 3))] = EMPTY
    born = (fg == EMPTY) & (n == 3)
    born_kind = np.where(ng >= 2, GREEN, np.where(ny >= 2, GRAY, RED)).astype(np.int8)
    out[born] = born_kind[born]
    if agent_r >= 0:
        out[agent_r, agent_c] = fg[agent_r, agent_c]
    return out


try:
    if os.environ.get("SARLKIT_PURE"):
        raise ImportError("pure mode requested")
    from sarlkit._life import life_step as _compiled_life_step
except ImportError:
    _compiled_life_step = None


def _life_step_compiled(fg: np.ndarray, agent_r: int, agent_c: int) -> np.ndarray:
    return _compiled_life_step(np.ascontiguousarray(fg, dtype=np.int8), agent_r, agent_c)


if _compiled_life_step is not None:
    BACKEND = "compiled"
    life_step = _life_step_compiled
else:
    BACKEND = "numpy"
    life_step = life_step_numpy
