# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled versions of the polynetwork kernels (see pyfallback.py for the
reference semantics; both lanes must agree exactly)."""

import numpy as np

cimport numpy as cnp

cnp.import_array()

IMPLEMENTATION = "compiled"


def closure(cnp.uint8_t[:, :] adj):
    cdef Py_ssize_t n = adj.shape[0]
    out_arr = np.zeros((n, n), dtype=np.uint8)
    cdef cnp.uint8_t[:, :] reach = out_arr
    cdef Py_ssize_t i, j, k
    for i in range(n):
        reach[i, i] = 1
        for j in range(n):
            if adj[i, j]:
                reach[i, j] = 1
    # Floyd-Warshall on booleans; n is small (feature nodes of one image).
    for k in range(n):
        for i in range(n):
            if reach[i, k]:
                for j in range(n):
                    if reach[k, j]:
                        reach[i, j] = 1
    return out_arr


def score_assignments(
    cnp.int32_t[:, :] maps,
    cnp.int32_t[:] edge_heads,
    cnp.int32_t[:] edge_tails,
    cnp.int32_t[:] edge_sn,
    cnp.uint8_t[:, :, :] reach,
):
    cdef Py_ssize_t pop = maps.shape[0]
    cdef Py_ssize_t n0 = maps.shape[1]
    cdef Py_ssize_t ne = edge_heads.shape[0]
    out_arr = np.zeros(pop, dtype=np.int64)
    cdef cnp.int64_t[:] out = out_arr
    cdef Py_ssize_t p, i, e
    cdef cnp.int64_t score
    cdef cnp.int32_t hm, tm
    for p in range(pop):
        score = 0
        for i in range(n0):
            if maps[p, i] < 0:
                score += 1
        for e in range(ne):
            hm = maps[p, edge_heads[e]]
            tm = maps[p, edge_tails[e]]
            if hm < 0 or tm < 0:
                score += 1
            elif not reach[edge_sn[e], hm, tm]:
                score += 1
        out[p] = score
    return out_arr


def sample_assignments(
    cnp.float64_t[:, :] weights,
    cnp.float64_t[:, :] uniforms,
):
    cdef Py_ssize_t pop = uniforms.shape[0]
    cdef Py_ssize_t n0 = uniforms.shape[1]
    cdef Py_ssize_t n1 = weights.shape[1]
    out_arr = np.full((pop, n0), -1, dtype=np.int32)
    cdef cnp.int32_t[:, :] out = out_arr
    used_arr = np.zeros(n1, dtype=np.uint8)
    cdef cnp.uint8_t[:] used = used_arr
    cdef Py_ssize_t p, i, j, pick, last_pos
    cdef double total, target, acc, wj
    for p in range(pop):
        for j in range(n1):
            used[j] = 0
        for i in range(n0):
            total = 0.0
            for j in range(n1):
                if not used[j]:
                    total += weights[i, j]
            if total <= 0.0:
                continue
            target = uniforms[p, i] * total
            acc = 0.0
            pick = -1
            last_pos = -1
            for j in range(n1):
                if used[j]:
                    continue
                wj = weights[i, j]
                if wj <= 0.0:
                    continue
                last_pos = j
                acc += wj
                if acc > target:
                    pick = j
                    break
            if pick < 0:
                pick = last_pos
            out[p, i] = <cnp.int32_t> pick
            used[pick] = 1
    return out_arr
