"""Electrical inconsistency metrics for a battery pack.

Works on a voltage matrix A of shape (n, m): n sampling instants, m cells,
volts. Range statistics capture the instantaneous spread; the low-rank
subspace projection scores individual cells against the pack's dominant
behaviour and flags the ones whose normalized score exceeds a threshold.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DEFAULT_SCORE_THRESHOLD = 4.5
_DEGENERATE_STD = 1e-12
_BALANCE = 3.0  # primal/dual residual ratio gating penalty adaptation


@dataclass(frozen=True)
class RpcaParams:
    """Knobs for the low-rank + sparse decomposition.

    ``lam`` (sparsity weight) and ``mu_init`` (initial penalty) default to
    the data-driven choices 1/sqrt(max(n, m)) and 1.25/sigma_max(A) when
    left as None.
    """

    lam: float | None = None
    mu_init: float | None = None
    rho: float = 1.5
    tol: float = 1e-7
    max_iter: int = 500

    def __post_init__(self) -> None:
        if self.lam is not None and self.lam <= 0:
            raise ValueError("lam must be > 0")
        if self.mu_init is not None and self.mu_init <= 0:
            raise ValueError("mu_init must be > 0")
        if self.rho <= 1:
            raise ValueError("rho must be > 1")
        if not (0 < self.tol < 1):
            raise ValueError("tol must be in (0, 1)")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass(frozen=True)
class RpcaResult:
    L: np.ndarray
    S: np.ndarray
    iterations: int
    residual: float
    converged: bool


@dataclass(frozen=True)
class VoltageEvaluation:
    dv_max: float
    dv_mean: float
    inconsistent_count: int
    scores: np.ndarray
    flagged_cells: frozenset[int] = field(default_factory=frozenset)

    def __post_init__(self) -> None:
        if not (self.dv_max >= self.dv_mean >= 0.0):
            raise ValueError(
                f"invalid spreads: dv_max={self.dv_max} dv_mean={self.dv_mean}"
            )
        if self.inconsistent_count != len(self.flagged_cells):
            raise ValueError("inconsistent_count must equal |flagged_cells|")


def voltage_ranges(A: np.ndarray) -> tuple[float, float]:
    """Maximum and mean instantaneous cell-voltage spread (max - min per row)."""
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("voltage matrix must be 2-D")
    n, m = A.shape
    if n < 1 or m < 2:
        raise ValueError(f"need at least 1 sample and 2 cells, got {n}x{m}")
    spreads = A.max(axis=1) - A.min(axis=1)
    return float(spreads.max()), float(spreads.mean())


def _soft_threshold(X: np.ndarray, tau: float) -> np.ndarray:
    return np.sign(X) * np.maximum(np.abs(X) - tau, 0.0)


def _svd_threshold(X: np.ndarray, tau: float) -> np.ndarray:
    U, s, Vt = np.linalg.svd(X, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    keep = s > 0
    return (U[:, keep] * s[keep]) @ Vt[keep]


def rpca_decompose(A: np.ndarray, params: RpcaParams | None = None) -> RpcaResult:
    """Split A into a low-rank part L and a sparse part S with A ~= L + S.

    Inexact augmented-Lagrangian iteration: S by entrywise soft
    thresholding, L by singular-value thresholding, dual matrix updated
    with the residual each pass. The penalty is stepped by ``rho`` up or
    down to keep the feasibility residual and the split's own movement in
    balance, and iteration stops once both are below ``tol`` (relative
    Frobenius).

    Non-convergence within ``max_iter`` is reported through the
    ``converged`` flag, not an exception.

    TODO: truncated SVT with rank escalation for wide packs; late
    iterations on full-size packs currently pay a dense SVD each.
    """
    params = params or RpcaParams()
    A = np.asarray(A, dtype=float)
    if A.ndim != 2:
        raise ValueError("input matrix must be 2-D")
    if min(A.shape) < 2:
        raise ValueError("need at least a 2x2 matrix")
    if not np.isfinite(A).all():
        raise ValueError("input matrix contains non-finite values")

    norm_a = float(np.linalg.norm(A))
    if norm_a == 0.0:
        zero = np.zeros_like(A)
        return RpcaResult(L=zero, S=zero.copy(), iterations=0, residual=0.0,
                          converged=True)

    n, m = A.shape
    lam = params.lam if params.lam is not None else 1.0 / np.sqrt(max(n, m))
    sigma_max = float(np.linalg.norm(A, 2))
    mu_lo = params.mu_init if params.mu_init is not None else 1.25 / sigma_max
    mu = mu_lo
    mu_hi = mu_lo * 1e8

    # Dual start scaled so the first thresholding step is non-trivial.
    Y = A / max(sigma_max, np.abs(A).max() / lam)
    L = np.zeros_like(A)
    S = np.zeros_like(A)
    residual = 1.0
    split_shift = 1.0
    iterations = 0

    for iterations in range(1, params.max_iter + 1):
        S_new = _soft_threshold(A - L + Y / mu, lam / mu)
        L = _svd_threshold(A - S_new + Y / mu, 1.0 / mu)
        split_shift = float(np.linalg.norm(S_new - S) / norm_a)
        S = S_new
        Z = A - L - S
        Y = Y + mu * Z
        residual = float(np.linalg.norm(Z) / norm_a)
        # Grow the penalty only while feasibility lags the split's own
        # movement; a runaway penalty freezes whatever feasible split
        # exists at that point, optimal or not.
        if residual > _BALANCE * mu * split_shift:
            mu = min(mu * params.rho, mu_hi)
        elif mu * split_shift > _BALANCE * residual:
            mu = max(mu / params.rho, mu_lo)
        # Feasibility alone is not enough to stop: the split must also
        # have stopped moving, else the iterate can be suboptimal.
        if residual <= params.tol and split_shift <= params.tol:
            break

    return RpcaResult(L=L, S=S, iterations=iterations, residual=residual,
                      converged=residual <= params.tol and split_shift <= params.tol)


def inconsistency_scores(A: np.ndarray, params: RpcaParams | None = None) -> np.ndarray:
    """Normalized per-cell inconsistency scores (zero mean, unit std).

    The low-rank part of A is decomposed by SVD and its dominant temporal
    mode is used as the reference profile; projecting each cell's series
    onto that profile gives one scalar per cell, which is then z-score
    normalized. The mode's sign is chosen so the projections correlate
    positively with the cells' mean voltages, making "high cell" mean
    "high score". A spread below 1e-12 means a perfectly consistent pack:
    all scores are returned as zero.
    """
    A = np.asarray(A, dtype=float)
    # The z-scoring cancels any positive scale of A mathematically;
    # working on a unit-Frobenius copy makes that hold numerically too.
    norm_a = float(np.linalg.norm(A))
    if norm_a > 0.0:
        A = A / norm_a
    result = rpca_decompose(A, params)
    U, _, _ = np.linalg.svd(result.L, full_matrices=False)
    mode = U[:, 0]

    f = A.T @ mode
    cell_means = A.mean(axis=0)
    if float(np.dot(f - f.mean(), cell_means - cell_means.mean())) < 0:
        f = -f

    std = float(f.std())
    if std < _DEGENERATE_STD:
        return np.zeros(A.shape[1])
    return (f - f.mean()) / std


def evaluate_pack_voltage(
    A: np.ndarray,
    params: RpcaParams | None = None,
    threshold: float = DEFAULT_SCORE_THRESHOLD,
    two_sided: bool = False,
) -> VoltageEvaluation:
    """Full electrical evaluation: spread statistics plus flagged cells.

    A cell is inconsistent when its score exceeds ``threshold`` (or
    |score| with ``two_sided``).
    """
    dv_max, dv_mean = voltage_ranges(A)
    scores = inconsistency_scores(A, params)
    test = np.abs(scores) if two_sided else scores
    flagged = frozenset(int(j) for j in np.nonzero(test > threshold)[0])
    return VoltageEvaluation(
        dv_max=dv_max,
        dv_mean=dv_mean,
        inconsistent_count=len(flagged),
        scores=scores,
        flagged_cells=flagged,
    )
