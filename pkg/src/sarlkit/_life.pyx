# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled Life-rule pass over a colored toroidal grid."""

import numpy as np
cimport numpy as cnp

cnp.import_array()

# Must match sarlkit.grid.CellKind.
cdef enum:
    EMPTY = 0
    GREEN = 4
    RED = 5
    GRAY = 6


def life_step(const signed char[:, ::1] fg, Py_ssize_t agent_r, Py_ssize_t agent_c):
    cdef Py_ssize_t h = fg.shape[0]
    cdef Py_ssize_t w = fg.shape[1]
    out_arr = np.empty((h, w), dtype=np.int8)
    cdef signed char[:, ::1] out = out_arr
    cdef Py_ssize_t r, c, dr, dc, rr, cc
    cdef int n, ng, nr, ny
    cdef signed char k, nk
    for r in range(h):
        for c in range(w):
            k = fg[r, c]
            if r == agent_r and c == agent_c:
                out[r, c] = k
                continue
            ng = 0
            nr = 0
            ny = 0
            for dr in range(-1, 2):
                rr = r + dr
                if rr < 0:
                    rr += h
                elif rr >= h:
                    rr -= h
                for dc in range(-1, 2):
                    if dr == 0 and dc == 0:
                        continue
                    cc = c + dc
                    if cc < 0:
                        cc += w
                    elif cc >= w:
                        cc -= w
                    nk = fg[rr, cc]
                    if nk == GREEN:
                        ng += 1
                    elif nk == RED:
                        nr += 1
                    elif nk == GRAY:
                        ny += 1
            n = ng + nr + ny
            if k == GREEN or k == RED or k == GRAY:
                if n < 2 or n > 3:
                    out[r, c] = EMPTY
                else:
                    out[r, c] = k
            elif k == EMPTY and n == 3:
                if ng >= 2:
                    out[r, c] = GREEN
                elif ny >= 2:
                    out[r, c] = GRAY
                else:
                    out[r, c] = RED
            else:
                out[r, c] = k
    return out_arr
