"""Command line front end: ``lattice-sar {simulate,fit,montecarlo,benchmark}``.

Option values come from, in increasing precedence, built-in defaults, a
``key = value`` config file (``--config``) and command-line flags.  The
resolved options are written as a ``#`` comment header into every output
file.  Exit codes: 0 success, 2 configuration error, 3 data error,
4 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .estimator import (
    EstimatorConfig,
    bootstrap,
    fit_with_fixed_weights,
    fitted_values,
    two_step_fit,
    unit_scheme_vector,
)
from .exceptions import CapabilityError, ConstraintError, ConvergenceError, NumericalError
from .gridio import (
    DataError,
    read_grid_csv,
    read_truth,
    write_grid_csv,
    write_record,
    write_table,
    write_truth,
)
from .lattice import build_lattice, neighbor_template
from .metrics import rmse, support_stats
from .mlbench import TIMING_COLUMNS, base_weights, ml_fit, timing_comparison
from .montecarlo import TABLE_COLUMNS, Cell, run_cell
from .resample import SECOND_STEP, eligible_sites
from .simulate import SarDataset, WeightScheme, simulate_dataset

log = logging.getLogger("lattice_sar")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
JOBS_ENV = "LATTICE_SAR_JOBS"


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# option converters


def _int(s: str) -> int:
    return int(s)


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError(f"{s!r} is not finite")
    return v


def _opt_int(s: str) -> Optional[int]:
    return None if s.strip().lower() in ("", "none") else int(s)


def _list(conv: Callable) -> Callable:
    def parse(s: str) -> list:
        items = [x.strip() for x in s.split(",") if x.strip()]
        if not items:
            raise ValueError("empty list")
        return [conv(x) for x in items]

    return parse


def _choice(*options: str) -> Callable:
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"{s!r} is not one of {', '.join(options)}")
        return s

    return parse


def _choices(*options: str) -> Callable:
    return _list(_choice(*options))


@dataclass(frozen=True)
class Option:
    conv: Callable
    default: Optional[str]
    help: str


SCHEMES = ("queen", "rook", "anisotropic", "vector")
COMMON = {
    "seed": Option(_int, "0", "random seed"),
    "out": Option(str, "results", "output directory"),
}
ESTIMATOR = {
    "gamma": Option(_float, "1.0", "adaptive lasso exponent"),
    "folds": Option(_int, "10", "cross-validation folds"),
    "l1_method": Option(_choice("rescale", "exact"), "rescale", "handling of the sum(w) < 1 bound"),
}
COMMANDS: dict[str, dict[str, Option]] = {
    "simulate": {
        "scheme": Option(_choice(*SCHEMES), "queen", "weighting scheme"),
        "c": Option(_float, "0.5", "dependence strength, 0 <= c < 1"),
        "n": Option(_int, "625", "number of sites (perfect square)"),
        "k": Option(_int, "1", "number of regressors"),
        "sigma": Option(_float, "1.0", "noise standard deviation"),
        "w": Option(_list(_float), None, "template weights for --scheme vector"),
        "m": Option(_int, "24", "template size of --w"),
        **COMMON,
    },
    "fit": {
        "input": Option(str, None, "grid CSV to fit"),
        "truth": Option(str, None, "truth file of simulated input"),
        "weights": Option(_choice("estimate", "queen", "rook"), "estimate", "estimated or fixed weights"),
        "method": Option(_choice("lasso", "ml"), "lasso", "two-step lasso or maximum likelihood"),
        "m": Option(_int, "24", "template size"),
        "r": Option(_opt_int, None, "first-step replications (default: maximum)"),
        "r2": Option(_opt_int, None, "second-step replications (default: min(r, eligible))"),
        "bootstrap": Option(_int, "0", "bootstrap iterations (0 = off)"),
        **ESTIMATOR,
        **COMMON,
    },
    "montecarlo": {
        "scheme": Option(_choices(*SCHEMES[:3]), "queen,anisotropic", "weighting schemes"),
        "c": Option(_list(_float), "0.5,0.7,0.9", "dependence strengths"),
        "m": Option(_list(_int), "24,48", "template sizes"),
        "r_mode": Option(_choices("min", "med", "max", "explicit"), "min,med,max", "replication counts"),
        "r": Option(_opt_int, None, "replications for r_mode explicit"),
        "n": Option(_int, "625", "number of sites"),
        "k": Option(_int, "1", "number of regressors"),
        "sigma": Option(_float, "1.0", "noise standard deviation"),
        "iterations": Option(_int, "100", "iterations per cell"),
        **ESTIMATOR,
        **COMMON,
    },
    "benchmark": {
        "n": Option(_list(_int), "400,900,1600,2500", "grid sizes"),
        "m": Option(_list(_int), "24,48", "template sizes of the two-step estimator"),
        "reps": Option(_int, "20", "repetitions per grid size"),
        "scheme": Option(_choice("queen", "rook"), "queen", "data-generating contiguity"),
        "c": Option(_float, "0.5", "dependence strength"),
        **COMMON,
    },
}
ALL_KEYS = {key for opts in COMMANDS.values() for key in opts}


def read_config_file(path) -> dict[str, str]:
    out = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from None
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, sep, val = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or not key:
            raise ConfigError(f"{path}:{no}: expected 'key = value'")
        if key not in ALL_KEYS and key != "jobs":
            raise ConfigError(f"{path}:{no}: unknown key {key!r}")
        out[key] = val.strip()
    return out


def resolve_config(command: str, flags: dict[str, Optional[str]], file_values: dict[str, str]) -> dict:
    """Merge defaults < config file < flags and convert every value."""
    opts = COMMANDS[command]
    raw = {k: o.default for k, o in opts.items()}
    raw.update({k: v for k, v in file_values.items() if k in opts})
    raw.update({k: v for k, v in flags.items() if k in opts and v is not None})
    cfg = {}
    for key, val in raw.items():
        if val is None:
            cfg[key] = None
            continue
        try:
            cfg[key] = opts[key].conv(val)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid value for {key}: {exc}") from None
    return cfg


def _jobs(flag: Optional[str], file_values: dict) -> int:
    raw = flag if flag is not None else file_values.get("jobs", os.environ.get(JOBS_ENV, "1"))
    try:
        jobs = int(raw)
    except ValueError:
        raise ConfigError(f"invalid jobs value {raw!r}") from None
    if jobs == 0 or jobs < -1:
        raise ConfigError("jobs must be positive or -1")
    return jobs


# ---------------------------------------------------------------------------
# commands


def _square(n: int) -> int:
    side = math.isqrt(n)
    if n < 1 or side * side != n:
        raise ConfigError(f"n={n} is not a positive perfect square")
    return side


def _scheme(cfg) -> WeightScheme:
    if cfg["scheme"] == "vector":
        if cfg["w"] is None:
            raise ConfigError("--scheme vector needs --w")
        neighbor_template(cfg["m"])
        if len(cfg["w"]) != cfg["m"]:
            raise ConfigError(f"--w has {len(cfg['w'])} entries, template m={cfg['m']}")
        return WeightScheme("vector", w=tuple(cfg["w"]), m=cfg["m"])
    return WeightScheme(cfg["scheme"], cfg["c"])


def cmd_simulate(cfg: dict, jobs: int) -> None:
    side = _square(cfg["n"])
    if cfg["k"] < 1 or cfg["sigma"] <= 0:
        raise ConfigError("k must be positive and sigma must be positive")
    scheme = _scheme(cfg)
    ds = simulate_dataset(build_lattice(side, side), scheme, k=cfg["k"], sigma=cfg["sigma"],
                          rng=np.random.default_rng(cfg["seed"]))
    out = _outdir(cfg)
    write_grid_csv(out / "data.csv", ds, cfg)
    write_truth(out / "truth.txt", scheme, ds.beta_true, cfg["sigma"], cfg)


def _estimator_config(cfg, r1=None, r2=None, m=None) -> EstimatorConfig:
    return EstimatorConfig(m=cfg["m"] if m is None else m, r1=r1, r2=r2, gamma=cfg["gamma"],
                           folds=cfg["folds"], seed=cfg["seed"], l1_method=cfg["l1_method"])


def _weight_grid(template, values) -> list[dict]:
    """Rows of a ``side x side`` map indexed by row offset; the center is empty."""
    h = template.side // 2
    rows = []
    for dr in range(-h, h + 1):
        row = {"drow": dr}
        for dc in range(-h, h + 1):
            row[str(dc)] = "" if dr == dc == 0 else values[template.position((dr, dc))]
        rows.append(row)
    return rows


def _grid_columns(template) -> list[str]:
    h = template.side // 2
    return ["drow"] + [str(dc) for dc in range(-h, h + 1)]


def cmd_fit(cfg: dict, jobs: int) -> None:
    if cfg["input"] is None:
        raise ConfigError("fit needs --input")
    template = neighbor_template(cfg["m"])
    if cfg["method"] == "ml" and cfg["weights"] == "estimate":
        raise ConfigError("--method ml needs fixed weights (--weights queen or rook)")
    if cfg["method"] == "ml" and cfg["bootstrap"]:
        raise ConfigError("--bootstrap applies to the lasso method only")
    if cfg["bootstrap"] < 0 or cfg["bootstrap"] == 1:
        raise ConfigError("--bootstrap must be 0 or at least 2")
    est = _estimator_config(cfg, cfg["r"], cfg["r2"]) if cfg["method"] == "lasso" else None

    try:
        ds = read_grid_csv(cfg["input"])
    except OSError as exc:
        raise DataError(f"cannot read {cfg['input']}: {exc}") from None
    truth = None
    if cfg["truth"] is not None:
        try:
            scheme, beta, sigma = read_truth(cfg["truth"])
        except OSError as exc:
            raise DataError(f"cannot read {cfg['truth']}: {exc}") from None
        if beta.shape[0] != ds.k:
            raise DataError("truth file and data disagree in the number of regressors")
        ds = SarDataset(ds.lattice, ds.y, ds.X, scheme=scheme, beta_true=beta, sigma=sigma)
        truth = ds.true_w(template)

    lat = ds.lattice
    if 4 * template.ring >= min(lat.nrows, lat.ncols):
        raise ConfigError(f"grid {lat.nrows}x{lat.ncols} is too small for m={cfg['m']}")
    e2 = eligible_sites(lat, template, SECOND_STEP)
    mask = np.zeros(lat.n, dtype=bool)
    mask[e2] = True

    rec: dict = {"method": cfg["method"], "weights": cfg["weights"], "m": cfg["m"],
                 "n": lat.n, "nrows": lat.nrows, "ncols": lat.ncols, "k": ds.k}
    se_w = None
    if cfg["method"] == "ml":
        W = base_weights(lat, cfg["weights"])
        fit = ml_fit(ds, W)
        yhat = fit.fitted(ds, W)
        w_hat = fit.c_hat * unit_scheme_vector(cfg["weights"], template)
        rec.update(c_hat=fit.c_hat, intercept=fit.intercept,
                   **{f"beta{p + 1}": b for p, b in enumerate(fit.beta_hat)},
                   sigma2=fit.sigma2_hat, loglik=fit.loglik, se_c=fit.std_err["c"],
                   se_intercept=fit.std_err["intercept"],
                   **{f"se_beta{p + 1}": s for p, s in enumerate(fit.std_err["beta"])},
                   se_sigma2=fit.std_err["sigma2"])
    else:
        scheme = None if cfg["weights"] == "estimate" else cfg["weights"]
        if scheme is None:
            fit = two_step_fit(ds, est)
        else:
            fit = fit_with_fixed_weights(ds, scheme, est)
        yhat, valid = fitted_values(fit, ds, template)
        mask &= valid
        w_hat = fit.w_hat
        rec.update(r1=fit.diagnostics["r1"], r2=fit.diagnostics["r2"], lambda1=fit.lambda1,
                   lambda2=fit.lambda2, c_hat=fit.c_hat, intercept=fit.intercept,
                   **{f"beta{p + 1}": b for p, b in enumerate(fit.beta_hat)})
        if cfg["bootstrap"]:
            boot = bootstrap(ds, est, cfg["bootstrap"], scheme=scheme, jobs=jobs)
            se_w = boot.std_err["w"]
            rec.update(bootstrap=boot.B, bootstrap_failures=boot.failures,
                       se_c=float(boot.std_err["c"]), se_intercept=float(boot.std_err["intercept"]),
                       **{f"se_beta{p + 1}": s for p, s in enumerate(boot.std_err["beta"])})
    rec["rmse"] = rmse(yhat[mask], ds.y[mask])
    rec["rmse_sites"] = int(mask.sum())
    if truth is not None:
        ev = support_stats(w_hat, truth)
        rec.update(mae_w=ev.mae, pi0=ev.specificity, pi1=ev.sensitivity, c_true=float(truth.sum()))
        rec["mae_beta"] = float(np.mean(np.abs(fit.beta_hat - ds.beta_true)))

    out = _outdir(cfg)
    write_record(out / "summary.txt", rec, cfg)
    rows = []
    for j, (dr, dc) in enumerate(template.offsets):
        row = {"drow": dr, "dcol": dc, "w_hat": w_hat[j]}
        if se_w is not None:
            row["se"] = se_w[j]
        if truth is not None:
            row["w_true"] = truth[j]
        rows.append(row)
    cols = ["drow", "dcol", "w_hat"] + (["se"] if se_w is not None else []) + (
        ["w_true"] if truth is not None else [])
    write_table(out / "weights.csv", rows, cols, cfg)
    write_table(out / "weightmap.csv", _weight_grid(template, w_hat), _grid_columns(template), cfg)


def cmd_montecarlo(cfg: dict, jobs: int) -> None:
    _square(cfg["n"])
    if cfg["iterations"] < 1:
        raise ConfigError("iterations must be positive")
    if "explicit" in cfg["r_mode"] and cfg["r"] is None:
        raise ConfigError("r_mode explicit needs --r")
    for c in cfg["c"]:
        WeightScheme("queen", c)
    cells = []
    for scheme in cfg["scheme"]:
        for c in cfg["c"]:
            for m in cfg["m"]:
                _estimator_config(cfg, m=m)
                for mode in cfg["r_mode"]:
                    cells.append(Cell(scheme, c, m, mode, cfg["n"], cfg["k"], cfg["sigma"],
                                      cfg["r"] if mode == "explicit" else None))
    kw = dict(gamma=cfg["gamma"], folds=cfg["folds"], l1_method=cfg["l1_method"])
    results = []
    for cell in cells:
        log.info("running %s", cell)
        results.append(run_cell(cell, cfg["iterations"], cfg["seed"], jobs=jobs, config_kw=kw))

    out = _outdir(cfg)
    write_table(out / "table.csv", [r.summary() for r in results], TABLE_COLUMNS, cfg)
    for res in results:
        if not res.w_hats:
            continue
        fm = res.frequency()
        cell = res.cell
        freq = fm.counts / fm.total
        name = f"frequency_{cell.scheme}_c{cell.c:g}_m{cell.m}_r{cell.r_mode}.csv"
        write_table(out / name, _weight_grid(fm.template, freq), _grid_columns(fm.template), cfg)


def cmd_benchmark(cfg: dict, jobs: int) -> None:
    for n in cfg["n"]:
        _square(n)
    for m in cfg["m"]:
        neighbor_template(m)
    if cfg["reps"] < 1:
        raise ConfigError("reps must be positive")
    WeightScheme(cfg["scheme"], cfg["c"])
    rows = timing_comparison(cfg["n"], cfg["m"], cfg["reps"], scheme=cfg["scheme"],
                             c=cfg["c"], seed=cfg["seed"])
    write_table(_outdir(cfg) / "benchmark.csv", rows, TIMING_COLUMNS, cfg)


def _outdir(cfg) -> Path:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    return out


HANDLERS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "montecarlo": cmd_montecarlo,
    "benchmark": cmd_benchmark,
}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lattice-sar", description=__doc__.splitlines()[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--jobs", help=f"parallel workers (default ${JOBS_ENV} or 1)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name, parents=[common])
        for key, opt in opts.items():
            dflt = "" if opt.default is None else f" (default {opt.default})"
            p.add_argument("--" + key.replace("_", "-"), dest=key, default=None,
                           help=opt.help + dflt)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        file_values = read_config_file(args.config) if args.config else {}
        jobs = _jobs(args.jobs, file_values)
        flags = {k: getattr(args, k) for k in COMMANDS[args.command]}
        cfg = resolve_config(args.command, flags, file_values)
        HANDLERS[args.command](cfg, jobs)
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ConfigError, ConstraintError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, ConvergenceError, CapabilityError, np.linalg.LinAlgError,
            ArithmeticError) as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
