"""Jump statistics, limiting-distribution quantiles and confidence intervals.

Two limit laws are supported for the refitted estimation error:

* vanishing jumps: ``argmax_z 2W(z) - |z|`` for a two-sided standard
  Brownian motion ``W``, scaled by ``sigma2 / xi^2``;
* non-vanishing jumps: the argmax over the integers of a two-sided random
  walk with i.i.d. increments of mean ``-xi^2`` and variance
  ``4 xi^2 sigma2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import log_ndtr, ndtr

from .core import ChangePointVector, DataMatrix, SegmentModel, _values
from .errors import DomainError, ValidationError

__all__ = [
    "JumpStatistics",
    "Interval",
    "IntervalSet",
    "IncrementLaw",
    "estimate_jump_statistics",
    "yao_cdf",
    "yao_quantile",
    "rw_quantile",
    "simulate_rw_argmax",
    "build_intervals",
    "simultaneous_alpha",
    "seed_sequence",
]

VANISHING = "vanishing"
NON_VANISHING = "non_vanishing"
REGIMES = (VANISHING, NON_VANISHING)

# continuation probability bound used to size the random-walk truncation
_RW_TAIL = 1e-4
_BLOCK = 500
_CHUNK = 32


def seed_sequence(seed, *extra: int) -> np.random.SeedSequence:
    """Deterministic seed stream keyed by ``seed`` and trailing counters."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.SeedSequence(seed.entropy, spawn_key=(*seed.spawn_key, *extra))
    base = [int(s) for s in seed] if isinstance(seed, (list, tuple)) else [int(seed)]
    return np.random.SeedSequence(base + [int(e) for e in extra])


@dataclass(frozen=True)
class JumpStatistics:
    """Per-change plug-in jump vectors, jump sizes and asymptotic variances."""

    eta: np.ndarray
    xi: np.ndarray
    sigma2_inf: np.ndarray

    @property
    def degenerate(self) -> np.ndarray:
        return self.xi == 0

    def __len__(self):
        return self.xi.shape[0]


def estimate_jump_statistics(x: DataMatrix, taus: ChangePointVector,
                             means_refit: SegmentModel) -> JumpStatistics:
    """Plug-in ``eta_j``, ``xi_j = ||eta_j||`` and ``eta' S eta / xi^2``.

    ``S`` is the sample covariance of the residuals about the fitted
    piecewise means. Only the quadratic forms are needed, so residuals are
    projected onto each ``eta_j`` and the p x p matrix is never formed.
    """
    v = _values(x)
    if means_refit.n_segments != taus.N + 1:
        raise ValidationError("means are not aligned with the change points")
    theta = means_refit.means
    bounds = taus.bounds
    resid = v.copy()
    for j, (a, b) in enumerate(zip(bounds, bounds[1:])):
        resid[a:b] -= theta[j]
    eta = theta[:-1] - theta[1:]
    xi = np.sqrt(np.sum(eta ** 2, axis=1))
    proj = resid @ eta.T if taus.N else np.zeros((v.shape[0], 0))
    quad = np.var(proj, axis=0, ddof=1) if v.shape[0] > 1 else np.zeros(taus.N)
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma2 = np.where(xi > 0, quad / np.where(xi > 0, xi ** 2, 1.0), np.nan)
    return JumpStatistics(eta=eta, xi=xi, sigma2_inf=sigma2)


def yao_cdf(x: float) -> float:
    """``P(|V| <= x)`` for ``V = argmax_z (2W(z) - |z|)``.

    Uses the closed form of Yao (1987) for ``G(x) = P(V <= x)``, x > 0::

        G(x) = 1 + sqrt(x / 2pi) e^{-x/8} - (x + 5)/2 Phi(-sqrt(x)/2)
                 + 3/2 e^{x} Phi(-3 sqrt(x)/2)

    and symmetry, ``P(|V| <= x) = 2 G(x) - 1``.
    """
    if x < 0 or not np.isfinite(x):
        raise DomainError(f"yao_cdf needs a finite x >= 0, got {x}")
    if x == 0:
        return 0.0
    r = math.sqrt(x)
    g = (1.0 + math.sqrt(x / (2 * math.pi)) * math.exp(-x / 8)
         - 0.5 * (x + 5) * float(ndtr(-r / 2))
         + 1.5 * math.exp(x + float(log_ndtr(-1.5 * r))))
    return float(min(max(2.0 * g - 1.0, 0.0), 1.0))


def yao_quantile(alpha: float) -> float:
    """Margin ``q`` with ``P(|V| <= q) = 1 - alpha``."""
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    target = 1.0 - alpha
    hi = 1.0
    while yao_cdf(hi) < target:
        hi *= 2.0
    return float(brentq(lambda q: yao_cdf(q) - target, 0.0, hi, xtol=1e-9, rtol=1e-12))


@dataclass(frozen=True)
class IncrementLaw:
    """Law of the random-walk increments: mean ``-xi^2``, variance ``4 xi^2 sigma2``."""

    kind: str
    mean: float
    variance: float

    def __post_init__(self):
        if self.kind not in ("gaussian", "laplace"):
            raise ValidationError(f"unknown increment law {self.kind!r}")
        if not self.variance > 0:
            raise ValidationError("increment variance must be positive")

    @classmethod
    def for_jump(cls, kind: str, xi: float, sigma2: float) -> "IncrementLaw":
        return cls(kind, -xi ** 2, 4.0 * xi ** 2 * sigma2)

    def sample(self, rng: np.random.Generator, size) -> np.ndarray:
        if self.kind == "gaussian":
            return rng.normal(self.mean, math.sqrt(self.variance), size)
        # Laplace variance is 2 b^2
        return rng.laplace(self.mean, math.sqrt(self.variance / 2.0), size)


def _truncation(xi2: float, sigma2: float) -> float:
    return xi2 * math.ceil(math.log(1.0 / _RW_TAIL) * (1.0 + 4.0 * sigma2 / xi2))


def _one_side(rng, law: IncrementLaw, n: int, B: float):
    """Max and (first) location of the max of ``n`` one-sided walks from 0."""
    best = np.zeros(n)
    pos = np.zeros(n, dtype=np.int64)
    cur = np.zeros(n)
    idx = np.arange(n)
    step = 0
    while idx.size:
        walk = cur[idx, None] + np.cumsum(law.sample(rng, (idx.size, _CHUNK)), axis=1)
        k = np.argmax(walk, axis=1)
        m = walk[np.arange(idx.size), k]
        up = m > best[idx]
        best[idx[up]] = m[up]
        pos[idx[up]] = step + k[up] + 1
        cur[idx] = walk[:, -1]
        step += _CHUNK
        idx = idx[best[idx] - cur[idx] <= B]
    return best, pos


def simulate_rw_argmax(xi: float, sigma2: float, law="gaussian", n_paths: int = 3000,
                       seed=0) -> np.ndarray:
    """Draws of ``argmax_z C(z)`` for the two-sided negative-drift walk.

    Each one-sided walk runs until it sits more than ``B`` below its running
    maximum. Ties prefer 0, then the smaller ``|z|``. Paths are generated in
    fixed blocks with independent seed streams, so results do not depend on
    how blocks are scheduled.
    """
    if not xi > 0:
        raise DomainError(f"xi must be positive, got {xi}")
    if sigma2 < 0:
        raise DomainError(f"sigma2 must be nonnegative, got {sigma2}")
    if n_paths < 1:
        raise DomainError("n_paths must be >= 1")
    if sigma2 == 0:
        return np.zeros(n_paths, dtype=np.int64)
    kind = law.kind if isinstance(law, IncrementLaw) else law
    inc = IncrementLaw.for_jump(kind, xi, sigma2)
    B = _truncation(xi ** 2, sigma2)
    out = np.empty(n_paths, dtype=np.int64)
    for blk, start in enumerate(range(0, n_paths, _BLOCK)):
        n = min(_BLOCK, n_paths - start)
        rng = np.random.default_rng(seed_sequence(seed, blk))
        r_best, r_pos = _one_side(rng, inc, n, B)
        l_best, l_pos = _one_side(rng, inc, n, B)
        right = (r_best > l_best) | ((r_best == l_best) & (r_pos <= l_pos))
        out[start:start + n] = np.where(right, r_pos, -l_pos)
    return out


def rw_quantile(xi: float, sigma2: float, alpha: float, law="gaussian", n_paths: int = 3000,
                seed=0) -> int:
    """Empirical ``(1 - alpha)`` quantile of ``|argmax|`` (inverted-CDF rule)."""
    if not 0 < alpha < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    z = np.abs(simulate_rw_argmax(xi, sigma2, law, n_paths, seed))
    return int(np.quantile(z, 1.0 - alpha, method="inverted_cdf"))


def simultaneous_alpha(alpha_target: float, H_size: int) -> float:
    """Componentwise level giving joint coverage ``1 - alpha_target`` over ``H_size`` changes."""
    if not 0 < alpha_target < 1:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha_target}")
    if H_size < 1:
        raise DomainError("H_size must be >= 1")
    return 1.0 - (1.0 - alpha_target) ** (1.0 / H_size)


@dataclass(frozen=True)
class Interval:
    j: int
    center: int
    margin: float
    lo: float
    hi: float
    regime: str
    alpha: float
    xi: float
    sigma2_inf: float
    error: str | None = None

    def covers(self, tau0: int) -> bool:
        return self.error is None and self.lo <= tau0 <= self.hi


@dataclass(frozen=True)
class IntervalSet:
    intervals: tuple[Interval, ...]

    CSV_COLUMNS = ("j", "tau", "regime", "alpha", "lo", "hi", "xi", "sigma2_inf")

    def __len__(self):
        return len(self.intervals)

    def __iter__(self):
        return iter(self.intervals)

    def __getitem__(self, k) -> Interval:
        return self.intervals[k]

    def to_rows(self) -> list[dict]:
        rows = []
        for iv in self.intervals:
            rows.append({
                "j": iv.j, "tau": iv.center, "regime": iv.regime, "alpha": iv.alpha,
                "lo": iv.lo, "hi": iv.hi, "xi": iv.xi, "sigma2_inf": iv.sigma2_inf,
            })
        return rows

    def to_dict(self) -> dict:
        return {"intervals": [
            {"j": iv.j, "tau": iv.center, "margin": iv.margin, "lo": iv.lo, "hi": iv.hi,
             "regime": iv.regime, "alpha": iv.alpha, "xi": iv.xi,
             "sigma2_inf": iv.sigma2_inf, "error": iv.error}
            for iv in self.intervals]}


def build_intervals(taus: ChangePointVector, stats: JumpStatistics, alpha: float = 0.05,
                    regime: str = VANISHING, law="gaussian", n_paths: int = 3000,
                    seed=0) -> IntervalSet:
    """Intervals ``tau_j +/- ME_j`` under one jump-size regime.

    Degenerate changes (zero estimated jump) get an ``error`` entry and
    ``nan`` bounds; the others are still produced.
    """
    if regime not in REGIMES:
        raise ValidationError(f"regime must be one of {REGIMES}, got {regime!r}")
    if len(stats) != taus.N:
        raise ValidationError("jump statistics are not aligned with the change points")
    q_v = yao_quantile(alpha) if regime == VANISHING else None
    out = []
    for j, tau in enumerate(taus.taus, start=1):
        xi = float(stats.xi[j - 1])
        s2 = float(stats.sigma2_inf[j - 1])
        if not xi > 0 or not np.isfinite(s2):
            out.append(Interval(j, tau, math.nan, math.nan, math.nan, regime, alpha, xi, s2,
                                error="zero estimated jump"))
            continue
        if regime == VANISHING:
            me = q_v * s2 / xi ** 2
        else:
            me = rw_quantile(xi, s2, alpha, law, n_paths, seed_sequence(seed, j))
        out.append(Interval(j, tau, me, tau - me, tau + me, regime, alpha, xi, s2))
    return IntervalSet(tuple(out))
