"""Plain-text file formats: grid CSV, truth files and key-value records.

Every writer can prepend a block of ``#`` comment lines; every reader skips
them.  Floats are written as their shortest round-trip representation, so
reading a file back gives the exact values.
"""

from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np

from .lattice import build_lattice
from .simulate import SarDataset, WeightScheme

__all__ = [
    "DataError",
    "fmt",
    "comment_block",
    "write_grid_csv",
    "read_grid_csv",
    "write_truth",
    "read_truth",
    "write_record",
    "read_record",
    "write_table",
]


class DataError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, msg: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {msg}" if line is not None else msg)


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (list, tuple, np.ndarray)):
        return ",".join(fmt(x) for x in v)
    return "" if v is None else str(v)


# where the files go does not change what is in them
_HEADER_SKIP = ("out",)


def comment_block(config: Optional[Mapping]) -> str:
    if not config:
        return ""
    keys = sorted(k for k in config if k not in _HEADER_SKIP and config[k] is not None)
    return "".join(f"# {k} = {fmt(config[k])}\n" for k in keys)


def _lines(path):
    """``(line_number, text)`` of the non-comment, non-blank lines."""
    with open(path, newline="") as fh:
        for no, raw in enumerate(fh, start=1):
            line = raw.rstrip("\r\n")
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            yield no, line


def write_grid_csv(path, dataset: SarDataset, config: Optional[Mapping] = None) -> None:
    lat = dataset.lattice
    k = dataset.k
    buf = io.StringIO()
    buf.write(comment_block(config))
    buf.write(",".join(["row", "col", "y"] + [f"x{p + 1}" for p in range(k)]) + "\n")
    for s in range(lat.n):
        r, c = divmod(s, lat.ncols)
        vals = [str(r), str(c), fmt(dataset.y[s])] + [fmt(x) for x in dataset.X[s]]
        buf.write(",".join(vals) + "\n")
    Path(path).write_text(buf.getvalue())


def read_grid_csv(path) -> SarDataset:
    """Parse a grid CSV; rows and columns are 0-based and must cover the grid exactly once."""
    lines = iter(_lines(path))
    try:
        hno, header = next(lines)
    except StopIteration:
        raise DataError("file has no header") from None
    cols = [h.strip() for h in header.split(",")]
    k = len(cols) - 3
    expect = ["row", "col", "y"] + [f"x{p + 1}" for p in range(k)]
    if k < 1 or cols != expect:
        raise DataError(f"header must be row,col,y,x1..xk, got {header!r}", hno)
    recs = []
    for no, line in lines:
        fields = next(csv.reader([line]))
        if len(fields) != k + 3:
            raise DataError(f"expected {k + 3} fields, got {len(fields)}", no)
        try:
            r, c = int(fields[0]), int(fields[1])
            vals = [float(x) for x in fields[2:]]
        except ValueError as exc:
            raise DataError(f"cannot parse record ({exc})", no) from None
        if r < 0 or c < 0:
            raise DataError("row and col must be nonnegative", no)
        if not np.all(np.isfinite(vals)):
            raise DataError("non-finite value", no)
        recs.append((no, r, c, vals))
    if not recs:
        raise DataError("file has no records")
    nrows = max(rec[1] for rec in recs) + 1
    ncols = max(rec[2] for rec in recs) + 1
    lat = build_lattice(nrows, ncols)
    y = np.empty(lat.n)
    X = np.empty((lat.n, k))
    seen = np.zeros(lat.n, dtype=bool)
    for no, r, c, vals in recs:
        s = r * ncols + c
        if seen[s]:
            raise DataError(f"duplicate site ({r}, {c})", no)
        seen[s] = True
        y[s] = vals[0]
        X[s] = vals[1:]
    if not seen.all():
        r, c = divmod(int(np.argmin(seen)), ncols)
        raise DataError(f"grid {nrows}x{ncols} is incomplete: site ({r}, {c}) missing")
    return SarDataset(lat, y, X)


def write_record(path, record: Mapping, config: Optional[Mapping] = None) -> None:
    """Flat ``key = value`` text, one pair per line, in insertion order."""
    body = "".join(f"{k} = {fmt(v)}\n" for k, v in record.items())
    Path(path).write_text(comment_block(config) + body)


def read_record(path) -> dict:
    out = {}
    for no, line in _lines(path):
        key, sep, val = line.partition("=")
        if not sep or not key.strip():
            raise DataError(f"expected 'key = value', got {line!r}", no)
        out[key.strip()] = val.strip()
    return out


def write_truth(path, scheme: WeightScheme, beta, sigma: float, config: Optional[Mapping] = None) -> None:
    rec = {"scheme": scheme.kind, "c": scheme.c}
    if scheme.kind == "vector":
        rec["m"] = scheme.m
        rec["w"] = list(scheme.w)
    rec["beta"] = list(np.asarray(beta, dtype=float))
    rec["sigma"] = float(sigma)
    write_record(path, rec, config)


def read_truth(path) -> tuple[WeightScheme, np.ndarray, float]:
    rec = read_record(path)
    try:
        kind = rec["scheme"]
        if kind == "vector":
            w = [float(v) for v in rec["w"].split(",")]
            scheme = WeightScheme("vector", w=tuple(w), m=int(rec["m"]))
        else:
            scheme = WeightScheme(kind, float(rec["c"]))
        beta = np.array([float(v) for v in rec["beta"].split(",")])
        sigma = float(rec["sigma"])
    except (KeyError, ValueError) as exc:
        raise DataError(f"bad truth file {path}: {exc}") from None
    return scheme, beta, sigma


def write_table(path, rows: Iterable[Mapping], columns, config: Optional[Mapping] = None) -> None:
    buf = io.StringIO()
    buf.write(comment_block(config))
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(fmt(row[c]) for c in columns) + "\n")
    Path(path).write_text(buf.getvalue())
