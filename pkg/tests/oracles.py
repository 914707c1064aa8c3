"""Independent reference implementations used as test oracles.

Deliberately written with plain loops and the textbook definitions, no
shared code with the package, so they stay an independent check on the
production implementations.
"""

from __future__ import annotations

import math

import numpy as np

DIST_FLOOR = 1e-9


def brute_force_lof(values, k: int) -> list[float]:
    """Textbook LOF over 1-D points with the same distance floor."""
    values = [float(v) for v in values]
    n = len(values)

    def dist(i: int, j: int) -> float:
        return max(abs(values[i] - values[j]), DIST_FLOOR)

    def kdist(i: int) -> float:
        ds = sorted(dist(i, j) for j in range(n) if j != i)
        return ds[k - 1]

    def neighbors(i: int) -> list[int]:
        kd = kdist(i)
        return [j for j in range(n) if j != i and dist(i, j) <= kd]

    def lrd(i: int) -> float:
        ns = neighbors(i)
        total = sum(max(kdist(j), dist(i, j)) for j in ns)
        return len(ns) / total

    lrds = [lrd(i) for i in range(n)]
    scores = []
    for i in range(n):
        ns = neighbors(i)
        scores.append(sum(lrds[j] / lrds[i] for j in ns) / len(ns))
    return scores


def brute_force_retrieval(query_vectors, key_vectors, ids, k: int):
    """Max-fusion top-k from the full similarity matrix.

    Vectors must already be unit norm. Returns a list of
    (slice_id, fused_score, best_query_index) tuples.
    """
    scored = []
    for j, key_vec in enumerate(key_vectors):
        best = -math.inf
        best_q = -1
        for i, q_vec in enumerate(query_vectors):
            sim = float(np.dot(q_vec, key_vec))
            if sim > best:
                best = sim
                best_q = i
        scored.append((ids[j], best, best_q))
    scored.sort(key=lambda item: (-item[1], item[0]))
    return scored[:k]


def _grid_cost(pairs, q: np.ndarray) -> np.ndarray:
    total = np.zeros_like(q)
    q2 = q * q
    for p in pairs:
        r = p.y - q * p.x
        total += (r * r) / (1.0 + q2) ** 2 * (q2 / p.sigma_x ** 2 + 1.0 / p.sigma_y ** 2)
    return total


def grid_search_capacity(pairs, q_lo: float, q_hi: float, points: int = 100_000) -> float:
    """Dense grid minimizer of the weighted TLS cost, vectorized over Q.

    A second fine grid around the coarse argmin removes the coarse
    quantization (coarse spacing over a 270 Ah bracket exceeds 1e-3 Ah).
    """
    q = np.linspace(q_lo, q_hi, points)
    coarse = _grid_cost(pairs, q)
    i = int(np.argmin(coarse))
    lo = q[max(i - 1, 0)]
    hi = q[min(i + 1, points - 1)]
    fine = np.linspace(lo, hi, 1001)
    return float(fine[int(np.argmin(_grid_cost(pairs, fine)))])
