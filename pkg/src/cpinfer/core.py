"""Data model, global centering and the squared-loss objectives.

Conventions: a change point ``tau`` closes its segment, i.e. segment ``j``
covers rows ``tau_{j-1}+1 .. tau_j`` (1-based) which is the Python slice
``x[tau_{j-1}:tau_j]``. Sentinels ``0`` and ``T`` bracket every vector.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, ValidationError

__all__ = [
    "DataMatrix",
    "ChangePointVector",
    "SegmentModel",
    "center",
    "segment_mean",
    "segment_means",
    "loss_local",
    "local_loss_profile",
    "loss_global",
]


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class DataMatrix:
    """A T x p panel of observations (raw ``y_t`` or centered ``x_t``)."""

    values: np.ndarray
    centered: bool = False
    global_mean: np.ndarray | None = None

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim == 1:
            v = v[:, None]
        if v.ndim != 2:
            raise ValidationError(f"expected a 2-D panel, got shape {v.shape}")
        T, p = v.shape
        if T < 2 or p < 1:
            raise ValidationError(f"need T >= 2 and p >= 1, got T={T}, p={p}")
        if not np.all(np.isfinite(v)):
            bad = np.argwhere(~np.isfinite(v))[0]
            raise ValidationError(f"non-finite value at row {bad[0]}, column {bad[1]}")
        object.__setattr__(self, "values", _frozen(v))
        if self.centered:
            if self.global_mean is None:
                raise ValidationError("centered panel requires global_mean")
            gm = _frozen(np.asarray(self.global_mean, dtype=float).reshape(-1))
            if gm.shape != (p,):
                raise ValidationError("global_mean length must equal p")
            object.__setattr__(self, "global_mean", gm)
            if np.max(np.abs(v.sum(axis=0))) > 1e-9 * T * max(1.0, np.max(np.abs(v))):
                raise ValidationError("centered panel has non-zero column sums")
        elif self.global_mean is not None:
            raise ValidationError("global_mean is only populated for centered panels")

    @property
    def T(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ChangePointVector:
    """Sorted, distinct change locations in ``[1, T-1]``."""

    taus: tuple[int, ...]
    T: int

    def __init__(self, taus: Iterable[int], T: int):
        t = tuple(int(v) for v in taus)
        T = int(T)
        if T < 2:
            raise ValidationError(f"T must be >= 2, got {T}")
        if any(b <= a for a, b in zip(t, t[1:])):
            raise ValidationError(f"change points must be strictly increasing: {t}")
        if t and (t[0] < 1 or t[-1] > T - 1):
            raise ValidationError(f"change points must lie in [1, {T - 1}]: {t}")
        object.__setattr__(self, "taus", t)
        object.__setattr__(self, "T", T)

    @property
    def N(self) -> int:
        return len(self.taus)

    @property
    def bounds(self) -> tuple[int, ...]:
        """Change points with the sentinels ``0`` and ``T`` attached."""
        return (0, *self.taus, self.T)

    def __len__(self) -> int:
        return len(self.taus)

    def __iter__(self):
        return iter(self.taus)

    def __getitem__(self, j):
        return self.taus[j]


@dataclass(frozen=True)
class SegmentModel:
    """Per-segment mean vectors; ``supports[j]`` lists the nonzero coordinates."""

    means: np.ndarray
    lam: float = 0.0
    supports: tuple[np.ndarray, ...] = field(default=())

    def __post_init__(self):
        m = np.asarray(self.means, dtype=float)
        if m.ndim == 1:
            m = m[None, :]
        if m.ndim != 2:
            raise ValidationError(f"means must be 2-D, got shape {m.shape}")
        if self.lam < 0:
            raise ValidationError(f"lambda must be nonnegative, got {self.lam}")
        if not self.supports:
            sup = tuple(np.flatnonzero(row) for row in m)
        else:
            if len(self.supports) != m.shape[0]:
                raise ValidationError("one support set per segment is required")
            sup = tuple(np.unique(np.asarray(s, dtype=int)) for s in self.supports)
            for j, s in enumerate(sup):
                off = np.ones(m.shape[1], dtype=bool)
                off[s] = False
                if np.any(m[j, off] != 0.0):
                    raise ValidationError(f"segment {j} has nonzero entries outside its support")
        for s in sup:
            s.setflags(write=False)
        object.__setattr__(self, "means", _frozen(m))
        object.__setattr__(self, "supports", sup)

    @property
    def n_segments(self) -> int:
        return self.means.shape[0]

    @property
    def support_mask(self) -> np.ndarray:
        mask = np.zeros(self.means.shape, dtype=bool)
        for j, s in enumerate(self.supports):
            mask[j, s] = True
        return mask


def _values(x: DataMatrix | np.ndarray) -> np.ndarray:
    if isinstance(x, DataMatrix):
        return x.values
    v = np.asarray(x, dtype=float)
    return v[:, None] if v.ndim == 1 else v


def center(raw: DataMatrix) -> DataMatrix:
    """Subtract the global mean ``ybar`` from every row."""
    if raw.centered:
        raise ValidationError("panel is already centered")
    ybar = raw.values.mean(axis=0)
    x = raw.values - ybar
    # exact-zero column sums up to rounding; remove the residual drift
    x -= x.mean(axis=0)
    return DataMatrix(x, centered=True, global_mean=ybar)


def segment_mean(x: DataMatrix | np.ndarray, a: int, b: int) -> np.ndarray:
    """Average of rows ``a+1 .. b`` (1-based), i.e. ``x[a:b].mean(0)``."""
    v = _values(x)
    if not 0 <= a < b <= v.shape[0]:
        raise DomainError(f"empty or out-of-range segment ({a}, {b}] for T={v.shape[0]}")
    return v[a:b].mean(axis=0)


def segment_means(x: DataMatrix | np.ndarray, taus: ChangePointVector | Sequence[int]) -> np.ndarray:
    """Raw piecewise means on the partition induced by ``taus``; (N+1) x p."""
    v = _values(x)
    bounds = taus.bounds if isinstance(taus, ChangePointVector) else (0, *taus, v.shape[0])
    if bounds[-1] != v.shape[0]:
        raise ValidationError("change-point vector was built for a different T")
    out = np.empty((len(bounds) - 1, v.shape[1]))
    for j, (a, b) in enumerate(zip(bounds, bounds[1:])):
        out[j] = segment_mean(v, a, b)
    return out


def loss_local(x, tau_j: int, left: int, right: int, theta_j, theta_j1) -> float:
    """Two-segment squared loss on the window ``(left, right]`` split at ``tau_j``."""
    v = _values(x)
    if not left < tau_j < right or left < 0 or right > v.shape[0]:
        raise DomainError(f"tau={tau_j} must lie strictly inside ({left}, {right})")
    a = np.asarray(theta_j, dtype=float)
    b = np.asarray(theta_j1, dtype=float)
    return float(np.sum((v[left:tau_j] - a) ** 2) + np.sum((v[tau_j:right] - b) ** 2))


def local_loss_profile(x, left: int, right: int, theta_j, theta_j1) -> np.ndarray:
    """Loss at every split ``tau = left+1 .. right-1`` via O(p) rolling updates.

    Moving row ``t`` from the right mean to the left mean changes the loss by
    ``||x_t - a||^2 - ||x_t - b||^2 = -2 x_t.(a - b) + ||a||^2 - ||b||^2``.
    """
    v = _values(x)
    if not 0 <= left < right <= v.shape[0] or right - left < 2:
        raise DomainError(f"window ({left}, {right}) holds no interior split")
    a = np.asarray(theta_j, dtype=float)
    b = np.asarray(theta_j1, dtype=float)
    w = v[left:right]
    base = float(np.sum((w - b) ** 2))
    delta = -2.0 * (w[:-1] @ (a - b)) + (a @ a - b @ b)
    return base + np.cumsum(delta)


def loss_global(x, taus: ChangePointVector, model: SegmentModel) -> float:
    """Sum of squared residuals over all segments induced by ``taus``."""
    v = _values(x)
    if model.n_segments != taus.N + 1:
        raise ValidationError(
            f"model has {model.n_segments} segments but taus induce {taus.N + 1}")
    if model.means.shape[1] != v.shape[1] or taus.T != v.shape[0]:
        raise ValidationError("model/panel dimension mismatch")
    bounds = taus.bounds
    total = 0.0
    for j, (a, b) in enumerate(zip(bounds, bounds[1:])):
        total += float(np.sum((v[a:b] - model.means[j]) ** 2))
    return total
