"""Pack capacity and state-of-health estimation.

Steady current periods are isolated with a local-outlier-factor filter,
each period yields one (SOC change, integrated charge) pair, and the pack
capacity is the minimizer of a weighted total-least-squares cost over
those pairs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Pairwise-distance floor keeps reachability densities finite when samples
# coincide; identical data then scores exactly 1.
_DIST_FLOOR = 1e-9
_LOF_CHUNK = 512

GOLDEN_RATIO_CONJ = (math.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class SteadySegment:
    k1: int
    k2: int
    mean_current: float

    def __post_init__(self) -> None:
        if self.k2 <= self.k1:
            raise ValueError("segment end must be after its start")


@dataclass(frozen=True)
class CapacityPair:
    x: float        # SOC difference over the segment
    y: float        # integrated charge, ampere-hours
    sigma_x: float
    sigma_y: float

    def __post_init__(self) -> None:
        if self.sigma_x <= 0 or self.sigma_y <= 0:
            raise ValueError("pair variances must be positive")


@dataclass(frozen=True)
class HealthResult:
    q_hat: float
    soh: float
    pairs_used: int
    cost_at_min: float
    at_boundary: bool = False

    def __post_init__(self) -> None:
        if self.q_hat <= 0:
            raise ValueError("estimated capacity must be positive")


def _chunk_distances(values: np.ndarray, start: int, stop: int) -> np.ndarray:
    """Floored pairwise distances of rows [start, stop) vs all, self = inf."""
    d = np.abs(values[start:stop, None] - values[None, :])
    d = np.maximum(d, _DIST_FLOOR)
    np.fill_diagonal(d[:, start:stop], np.inf)
    return d


def lof_scores(values: np.ndarray, k: int) -> np.ndarray:
    """Local outlier factor of each sample of a 1-D series.

    Classic density-ratio definition: k-distance neighborhoods (ties
    included), reachability distances, local reachability density, and the
    mean neighbor-to-own density ratio. Scores near 1 mean inlier.
    Distances are computed chunk by chunk so long series stay within
    memory.
    """
    values = np.asarray(values, dtype=float).ravel()
    n = values.size
    if k < 1:
        raise ValueError("k must be >= 1")
    if n <= k:
        raise ValueError(f"need more than k={k} samples, got {n}")

    kdist = np.empty(n)
    for start in range(0, n, _LOF_CHUNK):
        stop = min(start + _LOF_CHUNK, n)
        d = _chunk_distances(values, start, stop)
        kdist[start:stop] = np.sort(d, axis=1)[:, k - 1]

    # lrd(p) = 1 / mean over neighbors o of max(kdist(o), d(p, o)),
    # neighborhood = all points within kdist(p), ties included.
    lrd = np.empty(n)
    for start in range(0, n, _LOF_CHUNK):
        stop = min(start + _LOF_CHUNK, n)
        d = _chunk_distances(values, start, stop)
        mask = d <= kdist[start:stop, None]
        reach = np.maximum(d, kdist[None, :])
        sums = np.where(mask, reach, 0.0).sum(axis=1)
        lrd[start:stop] = mask.sum(axis=1) / sums

    # Mean of per-neighbor density ratios; keeps homogeneous data at
    # exactly 1 instead of accumulating summation round-off.
    scores = np.empty(n)
    for start in range(0, n, _LOF_CHUNK):
        stop = min(start + _LOF_CHUNK, n)
        d = _chunk_distances(values, start, stop)
        mask = d <= kdist[start:stop, None]
        ratios = lrd[None, :] / lrd[start:stop, None]
        scores[start:stop] = (ratios * mask).sum(axis=1) / mask.sum(axis=1)
    return scores


def detect_steady_segments(
    current: np.ndarray,
    timestamps: np.ndarray,
    k: int = 20,
    lof_threshold: float = 1.5,
    min_len_s: float = 600.0,
) -> list[SteadySegment]:
    """Maximal runs of LOF inliers lasting at least ``min_len_s``."""
    current = np.asarray(current, dtype=float).ravel()
    timestamps = np.asarray(timestamps, dtype=float).ravel()
    if current.size != timestamps.size:
        raise ValueError("current and timestamps must have equal length")

    scores = lof_scores(current, k)
    inlier = scores <= lof_threshold

    segments: list[SteadySegment] = []
    start = None
    for i in range(current.size + 1):
        if i < current.size and inlier[i]:
            if start is None:
                start = i
            continue
        if start is not None:
            end = i - 1
            if end > start and timestamps[end] - timestamps[start] >= min_len_s:
                segments.append(SteadySegment(
                    k1=start,
                    k2=end,
                    mean_current=float(current[start:end + 1].mean()),
                ))
            start = None
    return segments


def ah_integrate(
    seg: SteadySegment,
    current: np.ndarray,
    soc: np.ndarray,
    dt_s: float,
    eta: float = 1.0,
    sigma_x: float = 0.01,
    sigma_y_rel: float = 0.005,
    sigma_y_floor: float = 0.1,
) -> CapacityPair:
    """One (SOC change, ampere-hours) observation from a steady segment.

    Charge is the left-endpoint Riemann sum of -eta * current over
    [k1, k2), converted to Ah, so concatenated segments add exactly.
    Discharge current is positive by convention, hence the minus sign
    pairs a positive SOC rise with charging current.
    """
    current = np.asarray(current, dtype=float).ravel()
    soc = np.asarray(soc, dtype=float).ravel()
    x = float(soc[seg.k2] - soc[seg.k1])
    if x == 0.0:
        raise ValueError("segment has zero SOC change")
    y = float(-(dt_s / 3600.0) * eta * current[seg.k1:seg.k2].sum())
    return CapacityPair(
        x=x,
        y=y,
        sigma_x=sigma_x,
        sigma_y=sigma_y_rel * abs(y) + sigma_y_floor,
    )


def rawtls_cost(q_hat: float, pairs: list[CapacityPair]) -> float:
    """Weighted total-least-squares cost of a capacity hypothesis.

    Sum over pairs of (y - Q*x)^2 / (1 + Q^2)^2 * (Q^2/sigma_x^2 + 1/sigma_y^2);
    errors in both the SOC change and the integrated charge are accounted for.
    """
    if not pairs:
        raise ValueError("need at least one capacity pair")
    q2 = q_hat * q_hat
    total = 0.0
    for p in pairs:
        r = p.y - q_hat * p.x
        total += (r * r) / (1.0 + q2) ** 2 * (q2 / p.sigma_x ** 2 + 1.0 / p.sigma_y ** 2)
    return total


def golden_section_minimize(
    f,
    lo: float,
    hi: float,
    tol: float = 1e-4,
) -> float:
    """Abscissa of the minimum of a unimodal f on [lo, hi] to width ``tol``."""
    a, b = (lo, hi) if lo <= hi else (hi, lo)
    c = b - GOLDEN_RATIO_CONJ * (b - a)
    d = a + GOLDEN_RATIO_CONJ * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN_RATIO_CONJ * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN_RATIO_CONJ * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def estimate_capacity(
    pairs: list[CapacityPair],
    q_nom: float,
    bracket: tuple[float, float] = (0.3, 1.2),
    tol_ah: float = 1e-4,
) -> HealthResult:
    """Pack capacity and SOH by bracketed search of the weighted TLS cost.

    The bracket spans deep degradation (0.3 * q_nom) up to estimation-error
    headroom (1.2 * q_nom). A minimum pinned to either bracket edge is
    flagged but still returned.
    """
    if not pairs:
        raise ValueError("need at least one capacity pair")
    if q_nom <= 0:
        raise ValueError("nominal capacity must be positive")
    lo, hi = bracket[0] * q_nom, bracket[1] * q_nom
    q_hat = golden_section_minimize(lambda q: rawtls_cost(q, pairs), lo, hi,
                                    tol=tol_ah)
    at_boundary = (q_hat - lo) <= tol_ah or (hi - q_hat) <= tol_ah
    return HealthResult(
        q_hat=q_hat,
        soh=q_hat / q_nom,
        pairs_used=len(pairs),
        cost_at_min=rawtls_cost(q_hat, pairs),
        at_boundary=at_boundary,
    )
