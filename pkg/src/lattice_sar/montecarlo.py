"""Monte Carlo harness for the simulation study.

Iteration ``t`` of a design cell draws its data from a seed that depends on
``(seed, t, scheme, c)`` only, so the replication counts ``r_min``,
``r_med`` and ``r_max`` (and both template sizes) are compared on the same
simulated fields.
"""

from __future__ import annotations

import logging
import math
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from .estimator import EstimatorConfig, two_step_fit
from .exceptions import ConvergenceError
from .lattice import build_lattice, neighbor_template
from .metrics import ZERO_TOL, recovery_frequency, support_stats
from .resample import replication_counts
from .simulate import WeightScheme, simulate_dataset

__all__ = ["Cell", "CellResult", "iteration_seeds", "resolve_r", "run_cell", "run_grid", "TABLE_COLUMNS"]

log = logging.getLogger(__name__)

TABLE_COLUMNS = ["scheme", "q", "c", "m", "r_mode", "r", "iterations", "failures",
                 "mae_beta", "mae_w", "pi0", "pi1", "c_hat"]


@dataclass(frozen=True)
class Cell:
    scheme: str
    c: float
    m: int
    r_mode: str = "max"
    n: int = 625
    k: int = 1
    sigma: float = 1.0
    r: Optional[int] = None


@dataclass
class CellResult:
    cell: Cell
    r: int
    records: list = field(default_factory=list)
    w_hats: list = field(default_factory=list)
    failures: int = 0

    def summary(self) -> dict:
        def mean(key):
            vals = [rec[key] for rec in self.records if not math.isnan(rec[key])]
            return float(np.mean(vals)) if vals else math.nan

        tmpl = WeightScheme(self.cell.scheme, self.cell.c) if self.cell.scheme != "vector" else None
        return {
            "scheme": self.cell.scheme,
            "q": tmpl.q if tmpl else "",
            "c": self.cell.c,
            "m": self.cell.m,
            "r_mode": self.cell.r_mode,
            "r": self.r,
            "iterations": len(self.records),
            "failures": self.failures,
            "mae_beta": mean("mae_beta"),
            "mae_w": mean("mae_w"),
            "pi0": mean("pi0"),
            "pi1": mean("pi1"),
            "c_hat": mean("c_hat"),
        }

    def frequency(self, zero_tol: float = ZERO_TOL):
        return recovery_frequency(self.w_hats, neighbor_template(self.cell.m), zero_tol)


def resolve_r(n: int, m: int, r_mode: str, r: Optional[int] = None) -> int:
    if r_mode == "explicit":
        if r is None:
            raise ValueError("explicit r mode needs r")
        return int(r)
    r_min, r_med, r_max = replication_counts(n, m)
    try:
        return {"min": r_min, "med": r_med, "max": r_max}[r_mode]
    except KeyError:
        raise ValueError(f"unknown r mode {r_mode!r}") from None


def iteration_seeds(seed: int, t: int, scheme: str, c: float) -> tuple[int, int]:
    """(data seed, estimator seed) of iteration ``t``."""
    tag = zlib.crc32(f"{scheme}:{c:.6f}".encode())
    ss = np.random.SeedSequence([seed, t, tag])
    data, est = ss.spawn(2)
    return int(data.generate_state(1)[0]), int(est.generate_state(1)[0])


def _iteration(cell: Cell, r: int, seed: int, t: int, config_kw: dict):
    side = math.isqrt(cell.n)
    lat = build_lattice(side, side)
    data_seed, est_seed = iteration_seeds(seed, t, cell.scheme, cell.c)
    ds = simulate_dataset(lat, WeightScheme(cell.scheme, cell.c), k=cell.k, sigma=cell.sigma,
                          rng=np.random.default_rng(data_seed))
    cfg = EstimatorConfig(m=cell.m, r1=r, seed=est_seed, **config_kw)
    try:
        fit = two_step_fit(ds, cfg)
    except (ConvergenceError, np.linalg.LinAlgError) as exc:
        log.warning("iteration %d of %s failed: %s", t, cell, exc)
        return None
    w_true = ds.true_w(cfg.template)
    ev = support_stats(fit.w_hat, w_true)
    rec = {
        "t": t,
        "mae_beta": float(np.mean(np.abs(fit.beta_hat - ds.beta_true))),
        "mae_w": ev.mae,
        "pi0": ev.specificity,
        "pi1": ev.sensitivity,
        "c_hat": fit.c_hat,
        "lambda1": fit.lambda1,
        "lambda2": fit.lambda2,
    }
    return rec, fit.w_hat


def run_cell(cell: Cell, iterations: int, seed: int = 0, *, jobs: int = 1,
             config_kw: Optional[dict] = None) -> CellResult:
    config_kw = dict(config_kw or {})
    r = resolve_r(cell.n, cell.m, cell.r_mode, cell.r)
    if jobs == 1:
        out = [_iteration(cell, r, seed, t, config_kw) for t in range(iterations)]
    else:
        out = Parallel(n_jobs=jobs)(
            delayed(_iteration)(cell, r, seed, t, config_kw) for t in range(iterations)
        )
    res = CellResult(cell, r)
    for item in out:
        if item is None:
            res.failures += 1
            continue
        rec, w = item
        res.records.append(rec)
        res.w_hats.append(w)
    return res


def run_grid(cells, iterations: int, seed: int = 0, *, jobs: int = 1,
             config_kw: Optional[dict] = None) -> list[CellResult]:
    return [run_cell(c, iterations, seed, jobs=jobs, config_kw=config_kw) for c in cells]
