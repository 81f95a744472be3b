"""Monte-Carlo laboratory: data-generating scenarios, metrics and the runner."""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from .core import ChangePointVector, DataMatrix, SegmentModel, center
from .detect import DetectorConfig
from .errors import ValidationError
from .inference import NON_VANISHING, VANISHING, seed_sequence
from .pipeline import run_pipeline

__all__ = [
    "ScenarioConfig",
    "MetricsReport",
    "SCENARIOS",
    "scenario",
    "gen_true_means",
    "toeplitz_sqrt",
    "gen_noise",
    "generate_dataset",
    "hausdorff",
    "run_replicate",
    "run_scenario",
    "worker_count",
]

ORACLE = "oracle_prelim"
ESTIMATED = "estimated_prelim"


@dataclass(frozen=True)
class ScenarioConfig:
    T: int = 450
    p: int = 50
    N: int = 2
    s: int = 4
    rho: float = 0.5
    noise: str = "gaussian"
    mode: str = ORACLE
    alpha: float = 0.05
    replicates: int = 500
    seed: int = 0
    n_paths: int = 3000
    noise_scale: float = 1.0
    detector: DetectorConfig = field(default_factory=DetectorConfig)

    def __post_init__(self):
        if self.noise not in ("gaussian", "laplace"):
            raise ValidationError(f"noise must be gaussian or laplace, got {self.noise!r}")
        if self.mode not in (ORACLE, ESTIMATED):
            raise ValidationError(f"unknown mode {self.mode!r}")
        if min(self.T, self.p, self.s, self.replicates, self.n_paths) < 1 or self.N < 0:
            raise ValidationError("counts must be positive")
        if 3 * self.s > self.p:
            raise ValidationError(f"need 3s <= p, got s={self.s}, p={self.p}")
        if self.T < 2 * (self.N + 1):
            raise ValidationError("N+1 segments do not fit in T")
        if not abs(self.rho) < 1:
            raise ValidationError("|rho| must be < 1")
        if not 0 < self.alpha < 1:
            raise ValidationError("alpha must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["detector"] = self.detector.to_dict()
        return d


# named designs: (noise, mode)
SCENARIOS = {
    "A": ("gaussian", ORACLE),
    "Ap": ("laplace", ORACLE),
    "B": ("gaussian", ESTIMATED),
    "Bp": ("laplace", ESTIMATED),
    "C": ("gaussian", ESTIMATED),
}


def scenario(name: str, **kw) -> ScenarioConfig:
    try:
        noise, mode = SCENARIOS[name]
    except KeyError:
        raise ValidationError(f"unknown scenario {name!r}; choose from {sorted(SCENARIOS)}") from None
    return ScenarioConfig(noise=noise, mode=mode, **kw)


@dataclass(frozen=True)
class MetricsReport:
    replicates: int
    haus_mean: float
    haus_sd: float
    n_match: float
    n_conditioned: int
    comp_coverage_vanishing: float
    comp_coverage_nonvanishing: float
    avg_me_vanishing: float
    avg_me_nonvanishing: float
    simul_coverage: float
    conditioned_on_nmatch: bool
    failures: int

    CSV_COLUMNS = ("replicates", "haus_mean", "haus_sd", "n_match", "n_conditioned",
                   "comp_coverage_vanishing", "avg_me_vanishing",
                   "comp_coverage_nonvanishing", "avg_me_nonvanishing",
                   "simul_coverage", "conditioned_on_nmatch", "failures")

    def to_dict(self) -> dict:
        return asdict(self)

    def csv_row(self) -> dict:
        d = self.to_dict()
        return {k: d[k] for k in self.CSV_COLUMNS}


def gen_true_means(N: int, s: int, p: int) -> SegmentModel:
    """Cycle three disjoint s-sparse unit patterns over the N+1 segments."""
    if 3 * s > p:
        raise ValidationError(f"need 3s <= p, got s={s}, p={p}")
    patterns = np.zeros((3, p))
    for k in range(3):
        patterns[k, k * s:(k + 1) * s] = 1.0
    rows = [patterns[(j - 1) % 3] for j in range(1, N + 2)]
    return SegmentModel(np.array(rows))


def toeplitz_sqrt(p: int, rho: float) -> np.ndarray:
    """Symmetric square root of ``Sigma_ij = rho^|i-j|``."""
    lags = np.abs(np.subtract.outer(np.arange(p), np.arange(p)))
    sigma = rho ** lags.astype(float)
    w, V = np.linalg.eigh(sigma)
    return (V * np.sqrt(np.clip(w, 0.0, None))) @ V.T


_SQRT_CACHE: dict = {}


def _cached_sqrt(p: int, rho: float) -> np.ndarray:
    key = (p, float(rho))
    if key not in _SQRT_CACHE:
        _SQRT_CACHE[key] = toeplitz_sqrt(p, rho)
    return _SQRT_CACHE[key]


def gen_noise(T: int, p: int, rho: float = 0.5, noise: str = "gaussian", seed=0) -> np.ndarray:
    """Rows ``Sigma^{1/2} w_t`` with i.i.d. unit-variance ``w`` components."""
    if not abs(rho) < 1:
        raise ValidationError("|rho| must be < 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed_sequence(seed))
    if noise == "gaussian":
        w = rng.standard_normal((T, p))
    elif noise == "laplace":
        w = rng.laplace(0.0, 1.0 / math.sqrt(2.0), (T, p))
    else:
        raise ValidationError(f"unknown noise {noise!r}")
    return w @ _cached_sqrt(p, rho)


def true_change_points(T: int, N: int) -> ChangePointVector:
    return ChangePointVector([math.floor(j * T / (N + 1) + 0.5) for j in range(1, N + 1)], T)


def generate_dataset(cfg: ScenarioConfig, replicate: int):
    """Raw panel, true change points and true segment means for one replicate."""
    tau0 = true_change_points(cfg.T, cfg.N)
    truth = gen_true_means(cfg.N, cfg.s, cfg.p)
    signal = np.repeat(truth.means, np.diff(tau0.bounds), axis=0)
    rng = np.random.default_rng(seed_sequence(cfg.seed, replicate, 0))
    y = signal
    if cfg.noise_scale:
        y = signal + cfg.noise_scale * gen_noise(cfg.T, cfg.p, cfg.rho, cfg.noise, rng)
    return DataMatrix(y), tau0, truth


def hausdorff(est: ChangePointVector, truth: ChangePointVector) -> float:
    """Two-sided nearest-point distance; an empty estimate scores ``T``."""
    if truth.N == 0:
        raise ValidationError("truth must be nonempty")
    if est.N == 0:
        return float(truth.T)
    e = np.asarray(est.taus, dtype=float)
    t = np.asarray(truth.taus, dtype=float)
    d = np.abs(np.subtract.outer(e, t))
    return float(max(d.min(axis=1).max(), d.min(axis=0).max()))


def run_replicate(cfg: ScenarioConfig, replicate: int) -> dict:
    """One replicate: generate, estimate, build intervals, score against the truth."""
    raw, tau0, _ = generate_dataset(cfg, replicate)
    x = center(raw)
    prelim = tau0 if cfg.mode == ORACLE else None
    law = "gaussian" if cfg.noise == "gaussian" else "laplace"
    res = run_pipeline(x, cfg.detector, prelim=prelim, filter_prelim=cfg.mode != ORACLE,
                       alpha=cfg.alpha, law=law, n_paths=cfg.n_paths,
                       seed=seed_sequence(cfg.seed, replicate, 1))
    taus = res.taus
    rec = {
        "replicate": replicate,
        "N_hat": taus.N,
        "taus": list(taus.taus),
        "haus": hausdorff(taus, tau0),
        "matched": taus.N == tau0.N,
    }
    if rec["matched"] and tau0.N:
        van = res.intervals[VANISHING]
        nv = res.intervals[NON_VANISHING]
        t1 = tau0.taus[0]
        rec.update(
            cover_v=van[0].covers(t1),
            cover_nv=nv[0].covers(t1),
            me_v=van[0].margin,
            me_nv=nv[0].margin,
            cover_nv_each=[iv.covers(t) for iv, t in zip(nv, tau0.taus)],
            simul=all(iv.covers(t) for iv, t in zip(nv, tau0.taus)),
            degenerate=any(iv.error is not None for iv in nv),
        )
    return rec


def _run_batch(args):
    cfg, reps = args
    out = []
    for r in reps:
        try:
            out.append(run_replicate(cfg, r))
        except Exception as exc:  # recorded, not fatal
            out.append({"replicate": r, "error": f"{type(exc).__name__}: {exc}"})
    return out


def worker_count(requested: int | None = None) -> int:
    n = requested or os.cpu_count() or 1
    cap = os.environ.get("CPINFER_THREADS")
    if cap:
        n = min(n, max(1, int(cap)))
    return max(1, n)


def run_scenario(cfg: ScenarioConfig, workers: int | None = None, records: list | None = None) -> MetricsReport:
    """Run all replicates and aggregate the metrics.

    The report depends only on ``cfg``: each replicate owns its seed stream
    and results are aggregated in replicate order. If ``records`` is a list,
    the per-replicate records are appended to it.
    """
    n_workers = worker_count(workers)
    reps = list(range(cfg.replicates))
    if n_workers == 1:
        recs = _run_batch((cfg, reps))
    else:
        batches = [(cfg, reps[k::n_workers]) for k in range(n_workers)]
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            recs = [r for chunk in pool.map(_run_batch, batches) for r in chunk]
    recs.sort(key=lambda r: r["replicate"])
    if records is not None:
        records.extend(recs)
    return aggregate(recs, conditioned=cfg.mode == ESTIMATED)


def aggregate(recs: list[dict], conditioned: bool) -> MetricsReport:
    ok = [r for r in recs if "error" not in r]
    failures = len(recs) - len(ok)
    haus = np.array([r["haus"] for r in ok], dtype=float)
    matched = [r for r in ok if r["matched"] and "cover_v" in r]
    failures += sum(1 for r in matched if r["degenerate"])

    def freq(key):
        return float(np.mean([r[key] for r in matched])) if matched else math.nan

    def avg(key):
        vals = [r[key] for r in matched if np.isfinite(r[key])]
        return float(np.mean(vals)) if vals else math.nan

    return MetricsReport(
        replicates=len(recs),
        haus_mean=float(haus.mean()) if haus.size else math.nan,
        haus_sd=float(haus.std(ddof=1)) if haus.size > 1 else 0.0,
        n_match=float(np.mean([r["matched"] for r in ok])) if ok else math.nan,
        n_conditioned=len(matched),
        comp_coverage_vanishing=freq("cover_v"),
        comp_coverage_nonvanishing=freq("cover_nv"),
        avg_me_vanishing=avg("me_v"),
        avg_me_nonvanishing=avg("me_nv"),
        simul_coverage=freq("simul"),
        conditioned_on_nmatch=conditioned,
        failures=failures,
    )
