"""Thermal inconsistency metrics for a battery pack.

Works on a temperature matrix B of shape (q, p): q sampling instants,
p sensors, degrees Celsius.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ThermalEvaluation:
    """Per-pack thermal summary: worst/average sensor spread plus the
    time-accumulated consistency coefficient."""

    dt_max: float
    dt_mean: float
    tcc: float
    skipped_terms: int

    def __post_init__(self) -> None:
        if not (self.dt_max >= self.dt_mean >= 0.0):
            raise ValueError(
                f"invalid spreads: dt_max={self.dt_max} dt_mean={self.dt_mean}"
            )
        if self.skipped_terms < 0:
            raise ValueError("skipped_terms must be >= 0")


def temp_ranges(B: np.ndarray) -> tuple[float, float]:
    """Maximum and mean instantaneous sensor spread (max - min per row)."""
    B = np.asarray(B, dtype=float)
    if B.ndim != 2:
        raise ValueError("temperature matrix must be 2-D")
    q, p = B.shape
    if q < 1 or p < 2:
        raise ValueError(f"need at least 1 sample and 2 sensors, got {q}x{p}")
    spreads = B.max(axis=1) - B.min(axis=1)
    return float(spreads.max()), float(spreads.mean())


def tcc(B: np.ndarray) -> tuple[float, int]:
    """Thermal consistency coefficient.

    Accumulates, for each instant t >= 2, the mean sensor drift since the
    first instant divided by (t-1) times the instantaneous sensor spread.
    Instants with zero spread leave the ratio undefined; those terms are
    skipped and counted so callers can judge coverage.

    Returns (tcc, skipped_terms).
    """
    B = np.asarray(B, dtype=float)
    if B.ndim != 2:
        raise ValueError("temperature matrix must be 2-D")
    q, p = B.shape
    if q < 2 or p < 1:
        raise ValueError(f"need at least 2 samples and 1 sensor, got {q}x{p}")

    drift = (B[1:] - B[0]).sum(axis=1)          # sum_j (B_tj - B_1j), t = 2..q
    spread = B[1:].max(axis=1) - B[1:].min(axis=1)
    steps = np.arange(1, q)                     # (t - 1)

    usable = spread > 0.0
    total = 0.0
    if usable.any():
        total = float(
            (drift[usable] / (p * steps[usable] * spread[usable])).sum()
        )
    return total, int((~usable).sum())


def evaluate_pack_thermal(B: np.ndarray) -> ThermalEvaluation:
    """Full thermal evaluation of one pack's temperature matrix."""
    dt_max, dt_mean = temp_ranges(B)
    coeff, skipped = tcc(B)
    return ThermalEvaluation(dt_max=dt_max, dt_mean=dt_mean, tcc=coeff,
                             skipped_terms=skipped)
