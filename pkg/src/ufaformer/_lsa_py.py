"""Pure-Python shortest-augmenting-path assignment (fallback for ``_lsa``).

Jonker-Volgenant style: one augmenting path per row, found with a
Dijkstra-like scan over reduced costs, with dual variables ``u``/``v``
keeping reduced costs non-negative. Expects ``nr <= nc``.
"""
from __future__ import annotations

import math

import numpy as np


def solve(cost) -> np.ndarray:
    cost = np.asarray(cost, dtype=float)
    nr, nc = cost.shape
    rows = cost.tolist()
    u = [0.0] * nr
    v = [0.0] * nc
    path = [-1] * nc
    col4row = [-1] * nr
    row4col = [-1] * nc
    inf = math.inf

    for cur in range(nr):
        min_val = 0.0
        remaining = list(range(nc - 1, -1, -1))
        num_rem = nc
        shortest = [inf] * nc
        sr = [False] * nr
        sc = [False] * nc
        sink = -1
        i = cur
        while sink == -1:
            index = -1
            lowest = inf
            sr[i] = True
            ci, ui = rows[i], u[i]
            for it in range(num_rem):
                j = remaining[it]
                r = min_val + ci[j] - ui - v[j]
                if r < shortest[j]:
                    path[j] = i
                    shortest[j] = r
                if shortest[j] < lowest or (shortest[j] == lowest and row4col[j] == -1):
                    lowest = shortest[j]
                    index = it
            min_val = lowest
            if min_val == inf:
                raise ValueError("cost matrix is infeasible")
            j = remaining[index]
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
            sc[j] = True
            num_rem -= 1
            remaining[index] = remaining[num_rem]

        u[cur] += min_val
        for i in range(nr):
            if sr[i] and i != cur:
                u[i] += min_val - shortest[col4row[i]]
        for j in range(nc):
            if sc[j]:
                v[j] -= min_val - shortest[j]

        j = sink
        while True:
            i = path[j]
            row4col[j] = i
            col4row[i], j = j, col4row[i]
            if i == cur:
                break

    return np.asarray(col4row, dtype=np.intp)
