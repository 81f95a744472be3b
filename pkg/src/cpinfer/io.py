"""CSV ingestion and small artifact writers."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .core import DataMatrix
from .errors import IngestionError, ValidationError

__all__ = ["read_csv", "write_csv", "standardize", "write_json", "write_rows"]


def _is_number(tok: str) -> bool:
    try:
        float(tok)
    except ValueError:
        return False
    return True


def read_csv(path) -> tuple[DataMatrix, list[str] | None]:
    """Read a numeric panel, one row per time index.

    A first row containing any non-numeric token is taken as a header. Empty
    cells, non-numeric or non-finite values and ragged rows are rejected with
    the offending (1-based) line and column.
    """
    path = Path(path)
    try:
        with path.open(newline="") as fh:
            lines = list(csv.reader(fh))
    except (UnicodeDecodeError, csv.Error) as exc:
        raise IngestionError(f"{path}: not a readable CSV ({exc})") from None
    # csv.reader yields [] for blank lines; trailing blanks are harmless
    while lines and not lines[-1]:
        lines.pop()
    if not lines:
        raise IngestionError(f"{path}: file is empty")
    header = None
    start = 0
    if not all(_is_number(t) for t in lines[0]):
        header = [t.strip() for t in lines[0]]
        start = 1
    width = len(header) if header else len(lines[start]) if start < len(lines) else 0
    rows = []
    for i in range(start, len(lines)):
        line = lines[i]
        if len(line) != width:
            raise IngestionError(f"{path}: line {i + 1} has {len(line)} fields, expected {width}")
        vals = []
        for c, tok in enumerate(line):
            tok = tok.strip()
            if tok == "":
                raise IngestionError(f"{path}: missing value at line {i + 1}, column {c + 1}")
            try:
                v = float(tok)
            except ValueError:
                raise IngestionError(
                    f"{path}: non-numeric value {tok!r} at line {i + 1}, column {c + 1}") from None
            if not math.isfinite(v):
                raise IngestionError(f"{path}: non-finite value at line {i + 1}, column {c + 1}")
            vals.append(v)
        rows.append(vals)
    if len(rows) < 2:
        raise IngestionError(f"{path}: need at least 2 data rows, got {len(rows)}")
    return DataMatrix(np.array(rows, dtype=float)), header


def write_csv(path, x, header: list[str] | None = None) -> None:
    """Write a panel so that :func:`read_csv` recovers it bit for bit."""
    v = x.values if isinstance(x, DataMatrix) else np.asarray(x, dtype=float)
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(header)
        for row in v:
            w.writerow([repr(float(a)) for a in row])


def standardize(x: DataMatrix) -> DataMatrix:
    """Column-wise centre and scale by the sample SD (denominator T - 1).

    Constant columns cannot be scaled and are only centred.
    """
    v = x.values
    sd = v.std(axis=0, ddof=1)
    if np.any(sd == 0):
        sd = np.where(sd == 0, 1.0, sd)
    return DataMatrix((v - v.mean(axis=0)) / sd)


def _clean(obj):
    # json cannot carry nan; emit null instead
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def write_rows(path, rows: list[dict], columns) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: r.get(k) for k in columns})


def check_out_dir(path) -> Path:
    p = Path(path)
    if p.exists() and not p.is_dir():
        raise ValidationError(f"{p} exists and is not a directory")
    p.mkdir(parents=True, exist_ok=True)
    return p
