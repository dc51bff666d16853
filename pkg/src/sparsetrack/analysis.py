"""Quantitative diagnostics: rank, conditioning, correlations, time constants.

Memory capacity of a linear network equals the numeric rank of its design
matrix (rows are feature vectors of the samples). The absolute 0.1
singular-value cutoff is meaningful only under a declared scale convention,
which here is the library's feature convention: pixel intensities in
[0, 1] and sparse coefficients in 8-bit intensity units (see
``coding.COEFF_UNIT``), with dictionary atoms normalized to unit l2 norm.
Results quoting ranks should quote this convention with them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .images import Region
from .neurodp import FeatureCode, featurize

__all__ = [
    "build_design_matrix",
    "singular_values",
    "numeric_rank",
    "CapacityPoint",
    "capacity_curve",
    "pairwise_correlation",
    "hessian_condition",
    "TimeConstantFit",
    "fit_time_constant",
    "max_partitions",
]

RANK_CUTOFF = 0.1


def build_design_matrix(feature: FeatureCode, regions) -> np.ndarray:
    """Stack feature vectors of uniformly sized regions, one row per sample."""
    regions = list(regions)
    if not regions:
        raise ValueError("no sample regions")
    size = regions[0].size
    for r in regions:
        if r.size != size:
            raise ValueError("sample regions must share one size")
    return np.stack([featurize(feature, r) for r in regions])


def singular_values(matrix: np.ndarray) -> np.ndarray:
    """Singular values of the design matrix, descending.

    No rescaling is applied: the absolute cutoff presumes the declared
    feature conventions (unit-range pixels, 8-bit-unit coefficients from
    unit-norm atoms). Multiplying the matrix by c scales every value by
    |c|, so ranks are only comparable at a fixed convention.
    """
    M = np.asarray(matrix, dtype=np.float64)
    if M.ndim != 2 or M.size == 0:
        raise ValueError("need a nonempty 2-D matrix")
    return np.linalg.svd(M, compute_uv=False)


def numeric_rank(matrix: np.ndarray, cutoff: float = RANK_CUTOFF) -> int:
    """Count of singular values at or above the cutoff."""
    if cutoff <= 0:
        raise ValueError("cutoff must be positive")
    return int((singular_values(matrix) >= cutoff).sum())


@dataclass(frozen=True)
class CapacityPoint:
    n_max: int
    p: int
    saturated: bool  # target rank not reachable within the available pool


def capacity_curve(n_max_values, rank_of_p, p_values) -> list[CapacityPoint]:
    """Smallest feature length p whose design matrix reaches each target rank.

    ``rank_of_p`` maps a candidate p (from the increasing ``p_values``)
    to the numeric rank achieved with n_max samples; it is called as
    rank_of_p(p, n_max). A target that no candidate p reaches is recorded
    as saturated at the largest p tried.
    """
    p_values = sorted(p_values)
    points = []
    for n_max in n_max_values:
        achieved = None
        for p in p_values:
            if rank_of_p(p, n_max) >= n_max:
                achieved = p
                break
        if achieved is None:
            points.append(CapacityPoint(n_max, p_values[-1], True))
        else:
            points.append(CapacityPoint(n_max, achieved, False))
    return points


def pairwise_correlation(matrix: np.ndarray, i: int, j: int) -> float:
    """Sample correlation between feature columns i and j."""
    col_i = np.asarray(matrix, dtype=np.float64)[:, i]
    col_j = np.asarray(matrix, dtype=np.float64)[:, j]
    di = col_i - col_i.mean()
    dj = col_j - col_j.mean()
    denom = np.sqrt((di @ di) * (dj @ dj))
    if denom == 0:
        raise ValueError(f"column {i if not di.any() else j} has zero variance")
    return float(np.clip(di @ dj / denom, -1.0, 1.0))


def hessian_condition(matrix: np.ndarray, cutoff: float = RANK_CUTOFF) -> float:
    """Eigenvalue ratio of the least-squares Hessian 2 V'V.

    The smallest eigenvalue is taken over the columns kept by the rank
    cutoff, so numerically zero directions do not blow the ratio up.
    """
    sigma = singular_values(matrix)
    kept = int((sigma >= cutoff).sum())
    if kept == 0:
        raise ValueError("matrix has no singular values above the cutoff")
    return float((sigma[0] / sigma[kept - 1]) ** 2)


@dataclass(frozen=True)
class TimeConstantFit:
    delta: float
    r_squared: float
    decaying: bool


def fit_time_constant(trace) -> TimeConstantFit:
    """Exponential time constant from a log-linear fit of an error trace.

    ``trace`` is a sequence of (iteration, error) pairs with positive
    errors. Fits ln(error) against iteration; delta is -1/slope. A trace
    that is not decaying (slope >= 0) is flagged and gets delta = inf.
    """
    pairs = np.asarray(list(trace), dtype=np.float64)
    if pairs.ndim != 2 or pairs.shape[0] < 3 or pairs.shape[1] != 2:
        raise ValueError("need at least three (iteration, error) pairs")
    t, e = pairs[:, 0], pairs[:, 1]
    if np.any(e <= 0):
        raise ValueError("errors must be positive for a log-linear fit")
    slope, intercept = np.polyfit(t, np.log(e), 1)
    fitted = slope * t + intercept
    resid = np.log(e) - fitted
    total = np.log(e) - np.log(e).mean()
    denom = float(total @ total)
    r2 = 1.0 - float(resid @ resid) / denom if denom > 0 else 1.0
    if slope >= 0:
        return TimeConstantFit(float("inf"), r2, False)
    return TimeConstantFit(-1.0 / slope, r2, True)


def max_partitions(q: int, p_per_task: int, overcompleteness: float = 1.0) -> int:
    """Whole partitions available: floor(q * overcompleteness / p_per_task)."""
    if q < 1 or p_per_task < 1 or overcompleteness <= 0:
        raise ValueError("inputs must be positive")
    return int(np.floor(q * overcompleteness / p_per_task))
