"""Soft-thresholded segment means, BIC tuning and the locally refitted update."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    ChangePointVector,
    DataMatrix,
    SegmentModel,
    _values,
    local_loss_profile,
    segment_means,
)
from .errors import ValidationError

__all__ = [
    "RefitResult",
    "lambda_grid",
    "soft_threshold",
    "estimate_means",
    "bic_select_lambda",
    "local_refit",
    "refitted_means",
    "refit",
]

DEFAULT_GRID = (0.0, 0.5, 25)


def lambda_grid(lo: float = 0.0, hi: float = 0.5, n: int = 25) -> np.ndarray:
    """``n`` equally spaced interior points of the open interval ``(lo, hi)``."""
    if n < 1 or not hi > lo or lo < 0:
        raise ValidationError(f"bad lambda grid ({lo}, {hi}, {n})")
    return lo + (hi - lo) * np.arange(1, n + 1) / (n + 1)


def soft_threshold(v, lam: float):
    """Componentwise ``sign(v) * max(|v| - lam, 0)``.

    This is the proximal map of ``lam * ||.||_1``: it minimises
    ``0.5 * ||v - theta||^2 + lam * ||theta||_1``.
    """
    if lam < 0:
        raise ValidationError(f"lambda must be nonnegative, got {lam}")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def _check_segments(taus: ChangePointVector, T: int):
    if taus.T != T:
        raise ValidationError(f"change points were built for T={taus.T}, panel has T={T}")


def estimate_means(x: DataMatrix, taus: ChangePointVector, lam: float) -> SegmentModel:
    v = _values(x)
    _check_segments(taus, v.shape[0])
    theta = soft_threshold(segment_means(v, taus), lam)
    return SegmentModel(theta, lam=float(lam))


def _bic_trace(v: np.ndarray, taus: ChangePointVector, grid: np.ndarray, log_T: float):
    bounds = taus.bounds
    n = np.diff(bounds).astype(float)
    means = segment_means(v, taus)
    # loss(theta) = within-segment SS + sum_j n_j ||mean_j - theta_j||^2
    within = sum(float(np.sum((v[a:b] - means[j]) ** 2))
                 for j, (a, b) in enumerate(zip(bounds, bounds[1:])))
    absm = np.abs(means)
    out = []
    for lam in grid:
        shrink = np.minimum(absm, lam)
        loss = within + float(np.sum(n[:, None] * shrink ** 2))
        n_support = int(np.count_nonzero(np.any(absm > lam, axis=0)))
        out.append(loss + n_support * log_T)
    return np.asarray(out)


def bic_select_lambda(x: DataMatrix, taus: ChangePointVector, grid: Sequence[float] | None = None,
                      log_T: float | None = None):
    """Pick the shared regulariser minimising ``loss + |S| log T``.

    ``S`` is the union of the segment supports. Ties go to the smallest
    lambda. Returns ``(lambda, [(lambda, bic), ...])``.
    """
    v = _values(x)
    _check_segments(taus, v.shape[0])
    grid = lambda_grid(*DEFAULT_GRID) if grid is None else np.sort(np.asarray(grid, dtype=float))
    if grid.size == 0 or np.any(grid <= 0):
        raise ValidationError("lambda grid must be nonempty and strictly positive")
    if log_T is None:
        log_T = math.log(v.shape[0])
    bic = _bic_trace(v, taus, grid, log_T)
    k = int(np.argmin(bic))
    return float(grid[k]), [(float(l), float(b)) for l, b in zip(grid, bic)]


def local_refit(x: DataMatrix, taus_prelim: ChangePointVector, model: SegmentModel) -> ChangePointVector:
    """Re-minimise each two-segment loss inside its preliminary neighbours.

    Every window uses the original preliminary neighbours, so the updates are
    independent of one another. Window endpoints are excluded and ties go to
    the smallest index.
    """
    v = _values(x)
    _check_segments(taus_prelim, v.shape[0])
    if model.n_segments != taus_prelim.N + 1:
        raise ValidationError("model is not aligned with the preliminary change points")
    bounds = taus_prelim.bounds
    out = []
    for j in range(1, len(bounds) - 1):
        left, right = bounds[j - 1], bounds[j + 1]
        prof = local_loss_profile(v, left, right, model.means[j - 1], model.means[j])
        out.append(left + 1 + int(np.argmin(prof)))
    return ChangePointVector(out, taus_prelim.T)


def refitted_means(x: DataMatrix, taus_refit: ChangePointVector, supports) -> SegmentModel:
    """Raw segment means restricted to the supports of the regularised fit."""
    v = _values(x)
    _check_segments(taus_refit, v.shape[0])
    if len(supports) != taus_refit.N + 1:
        raise ValidationError("one support set per segment is required")
    raw = segment_means(v, taus_refit)
    out = np.zeros_like(raw)
    for j, s in enumerate(supports):
        s = np.asarray(s, dtype=int)
        out[j, s] = raw[j, s]
    return SegmentModel(out, lam=0.0, supports=tuple(supports))


@dataclass(frozen=True)
class RefitResult:
    taus_prelim: ChangePointVector
    taus_refit: ChangePointVector
    means_regularized: SegmentModel
    means_refit: SegmentModel
    lambda_selected: float
    bic_trace: list

    def to_dict(self) -> dict:
        return {
            "T": self.taus_refit.T,
            "N": self.taus_refit.N,
            "taus_prelim": list(self.taus_prelim.taus),
            "taus": list(self.taus_refit.taus),
            "lambda": self.lambda_selected,
            "supports": [s.tolist() for s in self.means_regularized.supports],
            "bic_trace": [list(pair) for pair in self.bic_trace],
        }


def refit(x: DataMatrix, taus_prelim: ChangePointVector, grid=None) -> RefitResult:
    """Step 2: BIC-tuned soft-thresholded means, local refit, debiased means."""
    lam, trace = bic_select_lambda(x, taus_prelim, grid)
    theta_hat = estimate_means(x, taus_prelim, lam)
    taus_refit = local_refit(x, taus_prelim, theta_hat)
    theta_tilde = refitted_means(x, taus_refit, theta_hat.supports)
    return RefitResult(taus_prelim, taus_refit, theta_hat, theta_tilde, lam, trace)
