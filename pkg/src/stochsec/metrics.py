"""Scoring utilities: calibration error, error ratios, decay fits, projections.

Everything here is a pure function of its arguments.  Sums that feed
equality-sensitive results (calibration bins) use ``math.fsum`` so the
outcome does not depend on sample order.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CalibrationBins",
    "TrendFit",
    "ProjectionResult",
    "calibration_bins",
    "ece",
    "relative_error",
    "fit_decay",
    "project_full_purification",
    "spearman_rank_correlation",
]


@dataclass(frozen=True)
class CalibrationBins:
    """Per-bin tallies for confidence calibration over M equal intervals.

    Bin m (0-based) covers [m/M, (m+1)/M); the last bin also includes 1.0.
    Empty bins carry zero count and zeroed means.
    """

    n_bins: int
    counts: np.ndarray
    accuracies: np.ndarray
    confidences: np.ndarray

    def __post_init__(self) -> None:
        if self.n_bins < 1:
            raise ValueError("need at least one calibration bin")
        for name in ("counts", "accuracies", "confidences"):
            if getattr(self, name).shape != (self.n_bins,):
                raise ValueError("%s must have one entry per bin" % name)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def expected_calibration_error(self) -> float:
        if self.total == 0:
            raise ValueError("calibration bins hold no samples")
        weights = self.counts / self.total
        return float(np.sum(weights * np.abs(self.accuracies - self.confidences)))


def calibration_bins(confidences, correctness, n_bins: int = 20) -> CalibrationBins:
    """Group (confidence, correct?) pairs into M equally spaced bins."""
    conf = np.asarray(confidences, dtype=np.float64).ravel()
    corr = np.asarray(correctness, dtype=np.float64).ravel()
    if conf.size == 0:
        raise ValueError("cannot bin an empty sample list")
    if conf.shape != corr.shape:
        raise ValueError(
            "confidences (%d) and correctness (%d) lengths differ"
            % (conf.size, corr.size)
        )
    if np.any(conf < 0.0) or np.any(conf > 1.0) or not np.all(np.isfinite(conf)):
        raise ValueError("confidences must lie in [0, 1]")
    if not np.all((corr == 0.0) | (corr == 1.0)):
        raise ValueError("correctness entries must be 0 or 1")
    if n_bins < 1:
        raise ValueError("need at least one calibration bin")

    idx = np.floor(conf * n_bins).astype(np.int64)
    idx[idx == n_bins] = n_bins - 1  # confidence exactly 1.0 joins the last bin

    counts = np.zeros(n_bins, dtype=np.int64)
    accs = np.zeros(n_bins, dtype=np.float64)
    confs = np.zeros(n_bins, dtype=np.float64)
    for m in range(n_bins):
        members = idx == m
        k = int(members.sum())
        counts[m] = k
        if k:
            # fsum makes per-bin means independent of sample order.
            accs[m] = math.fsum(corr[members]) / k
            confs[m] = math.fsum(conf[members]) / k
    return CalibrationBins(n_bins=n_bins, counts=counts, accuracies=accs, confidences=confs)


def ece(confidences, correctness, n_bins: int = 20) -> float:
    """Expected calibration error: bin-weighted |accuracy − confidence| gap."""
    return calibration_bins(confidences, correctness, n_bins).expected_calibration_error()


def relative_error(post_error: float, clean_baseline_error: float) -> float:
    """Post-transformation error as a multiple of the clean-baseline error."""
    if not math.isfinite(clean_baseline_error) or clean_baseline_error <= 0.0:
        raise ValueError(
            "baseline error must be positive; got %r (ratio undefined)"
            % (clean_baseline_error,)
        )
    if post_error < 0.0:
        raise ValueError("error rates cannot be negative")
    return post_error / clean_baseline_error


@dataclass(frozen=True)
class TrendFit:
    """Least-squares line through (n, ln error) pairs."""

    slope: float
    intercept: float
    residual: float

    def log_error_at(self, n) -> np.ndarray:
        return self.intercept + self.slope * np.asarray(n, dtype=np.float64)


@dataclass(frozen=True)
class ProjectionResult:
    """Projected sampling budget at which the fitted relative error reaches 1."""

    n_star: int | None
    reason: str = ""

    @property
    def projected(self) -> bool:
        return self.n_star is not None


def fit_decay(ns, errors) -> TrendFit:
    """Fit ln(error) = intercept + slope * n by least squares."""
    n_arr = np.asarray(ns, dtype=np.float64).ravel()
    e_arr = np.asarray(errors, dtype=np.float64).ravel()
    if n_arr.shape != e_arr.shape:
        raise ValueError("ns (%d) and errors (%d) lengths differ" % (n_arr.size, e_arr.size))
    for i, value in enumerate(e_arr):
        if not math.isfinite(value) or value <= 0.0:
            raise ValueError("error at index %d is %r; decay fit needs positive errors" % (i, value))
    if np.unique(n_arr).size < 2:
        raise ValueError("decay fit needs at least 2 distinct sampling budgets")

    log_e = np.log(e_arr)
    n_mean = n_arr.mean()
    log_mean = log_e.mean()
    centered = n_arr - n_mean
    slope = float(np.dot(centered, log_e - log_mean) / np.dot(centered, centered))
    intercept = float(log_mean - slope * n_mean)
    residual = float(np.linalg.norm(log_e - (intercept + slope * n_arr)))
    return TrendFit(slope=slope, intercept=intercept, residual=residual)


def project_full_purification(fit: TrendFit) -> ProjectionResult:
    """Solve the fitted relative error = 1 for the sampling budget n*.

    The fit is on ln(relative error), so the crossing is at
    intercept + slope * n = 0.  Decaying fits (slope < 0) project to the
    nearest integer budget, floored at zero when the fit already sits at
    or below 1.  Non-decaying fits yield no projection.
    """
    if fit.slope >= 0.0:
        return ProjectionResult(n_star=None, reason="no projected purification: error does not decay")
    crossing = -fit.intercept / fit.slope
    return ProjectionResult(n_star=max(0, int(round(crossing))))


def _tie_averaged_ranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(values.size, dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < values.size:
        j = i
        while j + 1 < values.size and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman_rank_correlation(xs, ys) -> float:
    """Pearson correlation of tie-averaged ranks."""
    x_arr = np.asarray(xs, dtype=np.float64).ravel()
    y_arr = np.asarray(ys, dtype=np.float64).ravel()
    if x_arr.shape != y_arr.shape:
        raise ValueError("xs (%d) and ys (%d) lengths differ" % (x_arr.size, y_arr.size))
    if x_arr.size < 2:
        raise ValueError("rank correlation needs at least 2 pairs")
    rx = _tie_averaged_ranks(x_arr)
    ry = _tie_averaged_ranks(y_arr)
    rx -= rx.mean()
    ry -= ry.mean()
    denom = math.sqrt(float(np.dot(rx, rx)) * float(np.dot(ry, ry)))
    if denom == 0.0:
        raise ValueError("rank correlation undefined when either input is constant")
    return float(np.dot(rx, ry) / denom)
