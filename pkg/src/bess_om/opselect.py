"""Standard-operation screening.

An operation qualifies as standard when it is long enough and its current
profile, after trimming the ramp-up/ramp-down ends, is well fitted by a
constant. Only such operations produce comparable inconsistency records.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .ingest import OperationSegment


@dataclass(frozen=True)
class SelectionParams:
    """Duration, magnitude and fit-quality thresholds.

    Defaults reflect the operating envelope of a grid-scale storage
    cluster: at least 90 minutes, at least 110 A, RMSE of the constant fit
    at most 15 A. ``signed_threshold`` applies the magnitude test to the
    signed fit instead of |fit|, rejecting charge operations outright
    under the discharge-positive sign convention.
    """

    t_min_s: float = 5400.0
    c_th_a: float = 110.0
    eps_rmse_a: float = 15.0
    trim_fraction: float = 1.0 / 6.0
    signed_threshold: bool = False

    def __post_init__(self) -> None:
        if self.t_min_s <= 0 or self.c_th_a <= 0 or self.eps_rmse_a <= 0:
            raise ValueError("thresholds must be strictly positive")
        if not (0.0 < self.trim_fraction < 0.5):
            raise ValueError("trim_fraction must lie in (0, 0.5)")


@dataclass(frozen=True)
class FitResult:
    c_star: float
    rmse: float
    middle_index_count: int

    def __post_init__(self) -> None:
        if self.rmse < 0 or self.middle_index_count < 1:
            raise ValueError("invalid fit result")


def fit_constant(op: OperationSegment, trim_fraction: float = 1.0 / 6.0) -> FitResult:
    """Least-squares constant fit of the current over the middle window.

    The window trims ``trim_fraction`` of the total duration off each end
    and is closed on both boundaries, so samples landing exactly on a
    boundary are included. The best constant is the window mean; the
    reported RMSE is the root mean squared deviation from it.
    """
    t = np.asarray(op.timestamps, dtype=float)
    current = np.asarray(op.current, dtype=float)
    if t.size < 3:
        raise ValueError("need at least 3 samples to trim a middle window")

    delta = (t[-1] - t[0]) * trim_fraction
    lo, hi = t[0] + delta, t[-1] - delta
    window = (t >= lo) & (t <= hi)
    if not window.any():
        raise ValueError("middle window contains no samples")

    samples = current[window]
    c_star = float(samples.mean())
    rmse = float(np.sqrt(np.mean((samples - c_star) ** 2)))
    return FitResult(c_star=c_star, rmse=rmse, middle_index_count=int(window.sum()))


def select_standard_ops(
    ops: list[OperationSegment],
    params: SelectionParams | None = None,
) -> list[tuple[OperationSegment, FitResult]]:
    """Operations passing the duration, magnitude and stability screens."""
    selected = []
    for op, fit, reason in classify_ops(ops, params):
        if reason == "selected":
            selected.append((op, fit))
    return selected


def classify_ops(
    ops: list[OperationSegment],
    params: SelectionParams | None = None,
) -> list[tuple[OperationSegment, FitResult | None, str]]:
    """Per-operation screening verdicts.

    Reasons: ``selected``, ``short_duration``, ``low_magnitude``,
    ``high_rmse`` (and ``unfittable`` for degenerate windows). Duration is
    screened first, so short operations are never fitted.
    """
    params = params or SelectionParams()
    results: list[tuple[OperationSegment, FitResult | None, str]] = []
    for op in ops:
        duration = float(op.timestamps[-1] - op.timestamps[0])
        if duration < params.t_min_s:
            results.append((op, None, "short_duration"))
            continue
        try:
            fit = fit_constant(op, params.trim_fraction)
        except ValueError:
            results.append((op, None, "unfittable"))
            continue
        magnitude = fit.c_star if params.signed_threshold else abs(fit.c_star)
        if magnitude < params.c_th_a:
            results.append((op, fit, "low_magnitude"))
        elif fit.rmse > params.eps_rmse_a:
            results.append((op, fit, "high_rmse"))
        else:
            results.append((op, fit, "selected"))
    return results
