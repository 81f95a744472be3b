"""``cpinfer`` command line: detect, intervals, simulate, quantile.

Exit codes: 0 success (including "no change"), 2 invalid input or
arguments, 3 unreadable files or unwritable outputs.
"""
from __future__ import annotations

import argparse
import json
import logging
import platform
import sys
from dataclasses import replace

import numpy as np
import scipy

from . import __version__
from .core import ChangePointVector, center
from .detect import DetectorConfig
from .errors import CpinferError, IngestionError, ValidationError
from .inference import (
    NON_VANISHING,
    REGIMES,
    VANISHING,
    build_intervals,
    estimate_jump_statistics,
    rw_quantile,
    yao_quantile,
)
from .io import check_out_dir, read_csv, standardize, write_json, write_rows
from .pipeline import run_pipeline
from .refit import bic_select_lambda, estimate_means, refitted_means
from .simlab import SCENARIOS, MetricsReport, run_scenario, scenario

log = logging.getLogger("cpinfer")

EXIT_OK, EXIT_INVALID, EXIT_IO = 0, 2, 3


def _grid(spec: str) -> tuple:
    try:
        lo, hi, n = spec.split(":")
        return float(lo), float(hi), int(n)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected lo:hi:n, got {spec!r}") from None


def _int_list(spec: str) -> list[int]:
    try:
        return [int(t) for t in spec.replace(" ", "").split(",") if t]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {spec!r}") from None


def _regimes(name: str) -> tuple:
    return REGIMES if name == "both" else (name,)


def _versions() -> dict:
    return {"cpinfer": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--out", default=".", help="output directory")
    p.add_argument("--alpha", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--paths", type=int, default=3000, help="random-walk paths per quantile")


def _add_data(p: argparse.ArgumentParser):
    p.add_argument("--input", required=True, help="CSV panel, one row per time index")
    p.add_argument("--regime", choices=(*REGIMES, "both"), default="both")
    p.add_argument("--min-sep", type=int, default=10)
    p.add_argument("--lambda-grid", type=_grid, default=(0.0, 0.5, 25), metavar="LO:HI:N")
    p.add_argument("--standardize", action="store_true", help="scale columns to unit sample SD")
    p.add_argument("--law", choices=("gaussian", "laplace"), default="gaussian",
                   help="increment law for non-vanishing quantiles")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="cpinfer", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="estimate change points and confidence intervals")
    _add_common(p)
    _add_data(p)
    p.add_argument("--prelim", type=_int_list, help="preliminary estimate t1,t2,... (skips segmentation)")

    p = sub.add_parser("intervals", help="confidence intervals around given or detected changes")
    _add_common(p)
    _add_data(p)
    p.add_argument("--taus", type=_int_list, help="final change locations t1,t2,...")
    p.add_argument("--prelim", type=_int_list, help="preliminary estimate when --taus is absent")

    p = sub.add_parser("simulate", help="Monte-Carlo coverage study")
    _add_common(p)
    p.add_argument("--scenario", choices=sorted(SCENARIOS), default="A")
    p.add_argument("--T", type=int, default=450)
    p.add_argument("--p", type=int, default=50)
    p.add_argument("--N", type=int, default=2)
    p.add_argument("--s", type=int, default=4)
    p.add_argument("--rho", type=float, default=0.5)
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--min-sep", type=int, default=10)
    p.add_argument("--lambda-grid", type=_grid, default=(0.0, 0.5, 25), metavar="LO:HI:N")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--zero-noise", action="store_true", help="noiseless data (smoke test)")

    p = sub.add_parser("quantile", help="margin-of-error quantile of a limit law")
    _add_common(p)
    p.add_argument("--regime", choices=REGIMES, default=VANISHING)
    p.add_argument("--xi", type=float)
    p.add_argument("--sigma2", type=float)
    p.add_argument("--law", choices=("gaussian", "laplace"), default="gaussian")
    return ap


def _load(args):
    raw, header = read_csv(args.input)
    if args.standardize:
        raw = standardize(raw)
    return center(raw), header


def _detector(args) -> DetectorConfig:
    return DetectorConfig(min_separation=args.min_sep, lambda_grid=args.lambda_grid)


def _meta(args, **extra) -> dict:
    cfg = {k: v for k, v in vars(args).items() if k not in ("out", "verbose")}
    return {"command": args.command, "config": cfg, "versions": _versions(), **extra}


def _write_intervals(out, sets: dict):
    rows = [r for reg in sets for r in sets[reg].to_rows()]
    write_rows(out / "intervals.csv", rows, next(iter(sets.values())).CSV_COLUMNS)
    write_json(out / "intervals.json", {reg: s.to_dict()["intervals"] for reg, s in sets.items()})


def cmd_detect(args) -> int:
    x, _ = _load(args)
    out = check_out_dir(args.out)
    cfg = _detector(args)
    prelim = ChangePointVector(args.prelim, x.T) if args.prelim else None
    res = run_pipeline(x, cfg, prelim=prelim, alpha=args.alpha, regimes=_regimes(args.regime),
                       law=args.law, n_paths=args.paths, seed=args.seed)
    fit = res.refit.to_dict()
    trace = fit.pop("bic_trace")
    fit["status"] = "change" if res.taus.N else "no change"
    write_json(out / "taus.json", fit)
    write_rows(out / "bic_trace.csv", [{"lambda": l, "bic": b} for l, b in trace], ("lambda", "bic"))
    _write_intervals(out, res.intervals)
    write_json(out / "run_meta.json", _meta(args, detector=cfg.to_dict(), T=x.T, p=x.p))
    print(json.dumps({"taus": fit["taus"], "status": fit["status"]}))
    return EXIT_OK


def cmd_intervals(args) -> int:
    if not args.taus:
        return cmd_detect(args)
    x, _ = _load(args)
    out = check_out_dir(args.out)
    cfg = _detector(args)
    taus = ChangePointVector(args.taus, x.T)
    lam, _ = bic_select_lambda(x, taus, cfg.grid())
    supports = estimate_means(x, taus, lam).supports
    means = refitted_means(x, taus, supports)
    stats = estimate_jump_statistics(x, taus, means)
    sets = {r: build_intervals(taus, stats, args.alpha, r, args.law, args.paths, args.seed)
            for r in _regimes(args.regime)}
    _write_intervals(out, sets)
    write_json(out / "run_meta.json", _meta(args, detector=cfg.to_dict(), lambda_=lam, T=x.T, p=x.p))
    print(json.dumps({"taus": list(taus.taus)}))
    return EXIT_OK


def cmd_simulate(args) -> int:
    out = check_out_dir(args.out)
    det = replace(DetectorConfig(), min_separation=args.min_sep, lambda_grid=args.lambda_grid)
    cfg = scenario(args.scenario, T=args.T, p=args.p, N=args.N, s=args.s, rho=args.rho,
                   alpha=args.alpha, replicates=args.reps, seed=args.seed, n_paths=args.paths,
                   noise_scale=0.0 if args.zero_noise else 1.0, detector=det)
    rep = run_scenario(cfg, workers=args.workers)
    write_rows(out / "metrics.csv", [rep.csv_row()], MetricsReport.CSV_COLUMNS)
    write_json(out / "metrics.json", {"scenario": args.scenario, "config": cfg.to_dict(),
                                      "metrics": rep.to_dict(), "versions": _versions()})
    print(json.dumps(rep.to_dict()))
    return EXIT_OK


def cmd_quantile(args) -> int:
    if args.regime == VANISHING:
        q = yao_quantile(args.alpha)
    else:
        if args.xi is None or args.sigma2 is None:
            raise ValidationError("non-vanishing quantiles need --xi and --sigma2")
        q = rw_quantile(args.xi, args.sigma2, args.alpha, args.law, args.paths, args.seed)
    rec = {"regime": args.regime, "alpha": args.alpha, "quantile": q}
    if args.regime == NON_VANISHING:
        rec.update(xi=args.xi, sigma2=args.sigma2, law=args.law, paths=args.paths, seed=args.seed)
    if args.out != ".":
        write_json(check_out_dir(args.out) / "quantile.json", rec)
    print(q)
    return EXIT_OK


COMMANDS = {"detect": cmd_detect, "intervals": cmd_intervals,
            "simulate": cmd_simulate, "quantile": cmd_quantile}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except IngestionError as exc:
        log.error("%s", exc)
        return EXIT_IO
    except (CpinferError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
