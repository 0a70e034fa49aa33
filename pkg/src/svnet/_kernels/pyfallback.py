"""NumPy reference implementation of the hot polynetwork kernels.

Semantics here are the contract; the compiled extension must match this
module bit for bit (same inputs, same outputs, including the consumption
order of pre-drawn uniforms in `sample_assignments`).
"""

from __future__ import annotations

import numpy as np

IMPLEMENTATION = "python"


def closure(adj: np.ndarray) -> np.ndarray:
    """Reflexive-transitive closure of a directed graph.

    adj: (n, n) uint8 adjacency matrix. Returns (n, n) uint8 where
    out[i, j] == 1 iff j is reachable from i (trivially including i == j).
    """
    n = adj.shape[0]
    reach = adj.astype(bool) | np.eye(n, dtype=bool)
    while True:
        nxt = reach @ reach
        if (nxt == reach).all():
            break
        reach = nxt
    return reach.astype(np.uint8)


def score_assignments(
    maps: np.ndarray,
    edge_heads: np.ndarray,
    edge_tails: np.ndarray,
    edge_sn: np.ndarray,
    reach: np.ndarray,
) -> np.ndarray:
    """Mismatch score for a population of assignments.

    maps: (pop, n0) int32, refiner node index per source node, -1 = unmapped.
    edge_heads/edge_tails/edge_sn: (E,) int32 source edges, with the state
    network each edge belongs to.
    reach: (k, n1, n1) uint8 per-network reachability of the refiner.

    Score = unmapped source nodes + source edges whose endpoint images lack
    a directed path in the matching refiner network.
    """
    pop = maps.shape[0]
    out = np.zeros(pop, dtype=np.int64)
    for p in range(pop):
        m = maps[p]
        unmapped = int((m < 0).sum())
        if edge_heads.size:
            hm = m[edge_heads]
            tm = m[edge_tails]
            ok = (hm >= 0) & (tm >= 0)
            good = np.zeros(edge_heads.shape[0], dtype=bool)
            if ok.any():
                good[ok] = reach[edge_sn[ok], hm[ok], tm[ok]].astype(bool)
            bad_edges = int((~good).sum())
        else:
            bad_edges = 0
        out[p] = unmapped + bad_edges
    return out


def sample_assignments(
    weights: np.ndarray,
    uniforms: np.ndarray,
) -> np.ndarray:
    """Draw injective type-respecting assignments from a weight matrix.

    weights: (n0, n1) float64, already exp(-distance) with zero for
    type-incompatible pairs. uniforms: (pop, n0) float64 pre-drawn in
    [0, 1). Source nodes are matched in row order; each picked refiner
    node is excluded from later rows of the same assignment.

    Returns (pop, n0) int32 with -1 for unmatched nodes.
    """
    pop, n0 = uniforms.shape
    n1 = weights.shape[1]
    out = np.full((pop, n0), -1, dtype=np.int32)
    for p in range(pop):
        used = np.zeros(n1, dtype=bool)
        for i in range(n0):
            w = np.where(used, 0.0, weights[i])
            total = w.sum()
            if total <= 0.0:
                continue
            target = uniforms[p, i] * total
            acc = 0.0
            pick = -1
            for j in range(n1):
                wj = w[j]
                if wj <= 0.0:
                    continue
                acc += wj
                if acc > target:
                    pick = j
                    break
            if pick < 0:  # numerical tail: last positive-weight candidate
                pick = int(np.nonzero(w)[0][-1])
            out[p, i] = pick
            used[pick] = True
    return out
