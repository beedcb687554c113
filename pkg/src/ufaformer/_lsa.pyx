# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled shortest-augmenting-path solver for rectangular assignment.

Mirrors ``_lsa_py.solve`` line for line; expects ``nr <= nc``.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def solve(double[:, ::1] cost):
    cdef Py_ssize_t nr = cost.shape[0], nc = cost.shape[1]
    cdef double[::1] u = np.zeros(nr)
    cdef double[::1] v = np.zeros(nc)
    cdef double[::1] shortest = np.empty(nc)
    cdef Py_ssize_t[::1] path = np.full(nc, -1, dtype=np.intp)
    cdef Py_ssize_t[::1] col4row = np.full(nr, -1, dtype=np.intp)
    cdef Py_ssize_t[::1] row4col = np.full(nc, -1, dtype=np.intp)
    cdef Py_ssize_t[::1] remaining = np.empty(nc, dtype=np.intp)
    cdef cnp.uint8_t[::1] sr = np.zeros(nr, dtype=np.uint8)
    cdef cnp.uint8_t[::1] sc = np.zeros(nc, dtype=np.uint8)
    cdef Py_ssize_t cur, i, j, it, index, sink, num_rem, tmp
    cdef double min_val, lowest, r

    for cur in range(nr):
        min_val = 0.0
        num_rem = nc
        for it in range(nc):
            remaining[it] = nc - it - 1
            shortest[it] = INFINITY
            sc[it] = 0
        for i in range(nr):
            sr[i] = 0
        sink = -1
        i = cur
        while sink == -1:
            index = -1
            lowest = INFINITY
            sr[i] = 1
            for it in range(num_rem):
                j = remaining[it]
                r = min_val + cost[i, j] - u[i] - v[j]
                if r < shortest[j]:
                    path[j] = i
                    shortest[j] = r
                if shortest[j] < lowest or (shortest[j] == lowest and row4col[j] == -1):
                    lowest = shortest[j]
                    index = it
            min_val = lowest
            if min_val == INFINITY:
                raise ValueError("cost matrix is infeasible")
            j = remaining[index]
            if row4col[j] == -1:
                sink = j
            else:
                i = row4col[j]
            sc[j] = 1
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
            tmp = col4row[i]
            col4row[i] = j
            j = tmp
            if i == cur:
                break

    return np.asarray(col4row).copy()
