"""Preliminary change-point detection.

A single-change least-squares estimator with an l0 boundary-selection step
is applied recursively on the current partition (binary segmentation) until
a full sweep adds nothing. Two clean-up filters follow: a minimum-separation
rule and removal of change points whose estimated jump is identically zero.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .core import ChangePointVector, DataMatrix, SegmentModel, _values, local_loss_profile
from .errors import ValidationError
from .refit import bic_select_lambda, estimate_means, lambda_grid

__all__ = [
    "DetectorConfig",
    "kfjs_single",
    "binary_segmentation",
    "filter_min_separation",
    "filter_zero_jumps",
    "preliminary_estimate",
]


@dataclass(frozen=True)
class DetectorConfig:
    """Tuning of the preliminary detector.

    ``coarse_grid`` is either ``"log"`` (ceil(log n) evenly spaced points in a
    window of length n) or a positive integer count. ``gamma_T`` selects the
    sample size in the penalty ``(|S_2| + 1) log T``: ``"window"`` uses the
    current window length, ``"global"`` the full series length.
    ``boundary_margin`` defaults to ``min_separation``. With ``recenter`` each
    window is re-centred before the single-change fit, so a sub-partition
    meets the same centred-input assumption as the full series.
    """

    min_separation: int = 10
    coarse_grid: str | int = "log"
    gamma_T: str = "window"
    lambda_grid: tuple = (0.0, 0.5, 25)
    boundary_margin: int | None = None
    recenter: bool = True

    def __post_init__(self):
        if self.min_separation < 1:
            raise ValidationError("min_separation must be >= 1")
        if self.boundary_margin is not None and self.boundary_margin < 1:
            raise ValidationError("boundary_margin must be >= 1")
        if self.gamma_T not in ("window", "global"):
            raise ValidationError(f"gamma_T must be 'window' or 'global', got {self.gamma_T!r}")
        if not (self.coarse_grid == "log" or (isinstance(self.coarse_grid, int) and self.coarse_grid >= 1)):
            raise ValidationError(f"bad coarse_grid {self.coarse_grid!r}")
        lo, hi, n = self.lambda_grid
        object.__setattr__(self, "lambda_grid", (float(lo), float(hi), int(n)))
        lambda_grid(*self.lambda_grid)  # validates

    @property
    def margin(self) -> int:
        return self.min_separation if self.boundary_margin is None else self.boundary_margin

    def grid(self) -> np.ndarray:
        return lambda_grid(*self.lambda_grid)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["lambda_grid"] = list(self.lambda_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        d = dict(d)
        if "lambda_grid" in d:
            d["lambda_grid"] = tuple(d["lambda_grid"])
        return cls(**d)


def _coarse_grid(lo: int, hi: int, cfg: DetectorConfig) -> np.ndarray:
    n = hi - lo
    m = max(1, math.ceil(math.log(n))) if cfg.coarse_grid == "log" else int(cfg.coarse_grid)
    m = min(m, n - 1)
    pts = lo + np.floor(np.arange(1, m + 1) * n / (m + 1) + 0.5).astype(int)
    return np.unique(np.clip(pts, lo + 1, hi - 1))


def _split_sse(w: np.ndarray, cuts: np.ndarray) -> np.ndarray:
    """Single-change SSE with raw split means at each relative cut."""
    n = w.shape[0]
    csum = np.cumsum(w, axis=0)
    total = csum[-1]
    left = csum[cuts - 1]
    right = total - left
    nl = cuts.astype(float)
    nr = n - nl
    # SSE = sum ||x||^2 - n_l ||mean_l||^2 - n_r ||mean_r||^2
    return -(np.sum(left ** 2, axis=1) / nl + np.sum(right ** 2, axis=1) / nr)


def kfjs_single(x: DataMatrix, lo: int, hi: int, cfg: DetectorConfig | None = None) -> int | None:
    """Detect at most one change in rows ``lo+1 .. hi``; ``None`` means no change.

    The coarse-grid initializer is refined by one plug-in least-squares
    update with soft-thresholded means; the change is kept only if it lowers
    the loss by at least ``gamma = (|S_2| + 1) log T`` relative to the
    no-change fit.
    """
    cfg = cfg or DetectorConfig()
    v = _values(x)
    T_full = v.shape[0]
    if not 0 <= lo < hi <= T_full:
        raise ValidationError(f"bad window ({lo}, {hi}) for T={T_full}")
    n = hi - lo
    if n < 2 * cfg.margin or n < 3:
        return None
    w = v[lo:hi]
    if cfg.recenter:
        w = w - w.mean(axis=0)
    coarse = _coarse_grid(0, n, cfg)
    tau_check = int(coarse[int(np.argmin(_split_sse(w, coarse)))])

    log_n = math.log(n)
    split = ChangePointVector([tau_check], n)
    lam, _ = bic_select_lambda(w, split, cfg.grid(), log_T=log_n)
    theta = estimate_means(w, split, lam).means

    prof = local_loss_profile(w, 0, n, theta[0], theta[1])
    k = int(np.argmin(prof))
    tau_hat = k + 1
    # Q(n, theta): every row assigned to the first segment
    q_none = float(np.sum((w - theta[0]) ** 2))
    log_T = log_n if cfg.gamma_T == "window" else math.log(T_full)
    gamma = (np.count_nonzero(theta[1]) + 1) * log_T
    if q_none - prof[k] < gamma:
        return None
    return lo + tau_hat


def binary_segmentation(x: DataMatrix, cfg: DetectorConfig | None = None) -> ChangePointVector:
    """Recursive single-change detection over the current partition.

    Detections closer than ``cfg.margin`` to either edge of their partition
    are discarded. Each sweep visits partitions left to right and the loop
    ends once a sweep adds nothing.
    """
    cfg = cfg or DetectorConfig()
    v = _values(x)
    T = v.shape[0]
    found: list[int] = []
    seen: dict[tuple[int, int], int | None] = {}
    while True:
        bounds = [0, *found, T]
        added = []
        for lo, hi in zip(bounds, bounds[1:]):
            if (lo, hi) not in seen:
                seen[(lo, hi)] = kfjs_single(v, lo, hi, cfg)
            tau = seen[(lo, hi)]
            if tau is not None and tau - lo >= cfg.margin and hi - tau >= cfg.margin:
                added.append(tau)
        if not added:
            break
        found = sorted(found + added)
    return ChangePointVector(found, T)


def filter_min_separation(taus: ChangePointVector, delta: int) -> ChangePointVector:
    """Drop, left to right, any change within ``delta`` of the last kept one."""
    if delta < 1:
        raise ValidationError("delta must be positive")
    kept: list[int] = []
    for t in taus.taus:
        if kept and t - kept[-1] < delta:
            continue
        kept.append(t)
    return ChangePointVector(kept, taus.T)


def filter_zero_jumps(taus: ChangePointVector, model: SegmentModel) -> ChangePointVector:
    """Remove change points whose adjacent mean estimates coincide exactly."""
    if model.n_segments != taus.N + 1:
        raise ValidationError("model is not aligned with the change points")
    m = model.means
    keep = [t for j, t in enumerate(taus.taus) if np.any(m[j] != m[j + 1])]
    return ChangePointVector(keep, taus.T)


def preliminary_estimate(x: DataMatrix, cfg: DetectorConfig | None = None,
                         prelim: ChangePointVector | None = None) -> ChangePointVector:
    """Step 1 with both clean-up filters.

    ``prelim`` replaces binary segmentation with an externally supplied
    estimate. The zero-jump filter is repeated with re-estimated means until
    no change is removed.
    """
    cfg = cfg or DetectorConfig()
    taus = binary_segmentation(x, cfg) if prelim is None else prelim
    taus = filter_min_separation(taus, cfg.min_separation)
    grid = cfg.grid()
    while taus.N:
        lam, _ = bic_select_lambda(x, taus, grid)
        kept = filter_zero_jumps(taus, estimate_means(x, taus, lam))
        if kept.N == taus.N:
            break
        taus = kept
    return taus
