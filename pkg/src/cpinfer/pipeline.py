"""End-to-end estimation and inference on one centered panel."""
from __future__ import annotations

from dataclasses import dataclass

from .core import ChangePointVector, DataMatrix
from .detect import DetectorConfig, preliminary_estimate
from .inference import (
    NON_VANISHING,
    VANISHING,
    IntervalSet,
    JumpStatistics,
    build_intervals,
    estimate_jump_statistics,
)
from .refit import RefitResult, refit


@dataclass(frozen=True)
class PipelineResult:
    refit: RefitResult
    stats: JumpStatistics
    intervals: dict[str, IntervalSet]

    @property
    def taus(self) -> ChangePointVector:
        return self.refit.taus_refit


def run_pipeline(x: DataMatrix, cfg: DetectorConfig | None = None, *,
                 prelim: ChangePointVector | None = None, filter_prelim: bool = True,
                 alpha: float = 0.05, regimes=(VANISHING, NON_VANISHING), law="gaussian",
                 n_paths: int = 3000, seed=0) -> PipelineResult:
    """Detect (or take ``prelim``), refit locally, and build intervals.

    ``filter_prelim=False`` passes an externally supplied preliminary vector
    through untouched, as when the true change points are plugged in.
    """
    cfg = cfg or DetectorConfig()
    if prelim is None or filter_prelim:
        taus = preliminary_estimate(x, cfg, prelim)
    else:
        taus = prelim
    fit = refit(x, taus, cfg.grid())
    stats = estimate_jump_statistics(x, fit.taus_refit, fit.means_refit)
    intervals = {
        r: build_intervals(fit.taus_refit, stats, alpha, r, law, n_paths, seed)
        for r in regimes
    }
    return PipelineResult(fit, stats, intervals)
