"""Maximum likelihood SAR baseline with a fixed, row-standardized weight matrix.

The model is ``y = c W y + X beta + eps`` with ``W`` known up to the scalar
``c``.  ``beta`` and ``sigma^2`` are concentrated out, leaving a scalar
search over ``c``; the log-determinant comes from the eigenvalues of ``W``.
"""

from __future__ import annotations

import math
import statistics
import time
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.optimize import minimize_scalar

from .estimator import EstimatorConfig, two_step_fit
from .exceptions import CapabilityError
from .lattice import Lattice, build_lattice
from .simulate import SCHEME_OFFSETS, SarDataset, WeightScheme, _assemble, simulate_dataset

__all__ = [
    "MAX_DENSE_N",
    "MlFit",
    "base_weights",
    "weight_eigenvalues",
    "feasible_interval",
    "concentrated_loglik",
    "ml_fit",
    "timing_comparison",
    "TIMING_COLUMNS",
]

MAX_DENSE_N = 4096
C_TOL = 1e-8
TIMING_COLUMNS = ["n", "method", "m", "mean_s", "sd_s"]


@dataclass
class MlFit:
    c_hat: float
    beta_hat: np.ndarray
    sigma2_hat: float
    loglik: float
    std_err: dict
    intercept: float = 0.0
    interval: tuple = (math.nan, math.nan)

    def residuals(self, dataset: SarDataset, W) -> np.ndarray:
        y = dataset.y
        return y - self.c_hat * (W @ y) - dataset.X @ self.beta_hat - self.intercept

    def fitted(self, dataset: SarDataset, W) -> np.ndarray:
        return dataset.y - self.residuals(dataset, W)


def base_weights(lattice: Lattice, kind: str) -> sp.csr_matrix:
    """Contiguity matrix of ``kind`` with every row summing to one."""
    if kind not in SCHEME_OFFSETS:
        raise ValueError(f"unknown contiguity {kind!r}")
    offs = SCHEME_OFFSETS[kind]
    return _assemble(lattice, offs, np.full(len(offs), 1.0 / len(offs)), 1.0)


def weight_eigenvalues(W, max_n: int = MAX_DENSE_N) -> np.ndarray:
    """All eigenvalues of ``W`` from a dense decomposition."""
    n = W.shape[0]
    if n > max_n:
        raise CapabilityError(
            f"n={n} exceeds the dense eigenvalue limit {max_n}; use the two-step estimator"
        )
    dense = W.toarray() if sp.issparse(W) else np.asarray(W, dtype=float)
    try:
        ev = sla.eigvals(dense, overwrite_a=True, check_finite=False)
    except (np.linalg.LinAlgError, ValueError) as exc:
        raise CapabilityError(f"eigenvalue computation failed ({exc}); use the two-step estimator") from exc
    if not np.all(np.isfinite(ev)):
        raise CapabilityError("non-finite eigenvalues; use the two-step estimator")
    return ev


def feasible_interval(eigs) -> tuple[float, float]:
    """``(1/lambda_min, 1/lambda_max)`` over the real parts of the spectrum."""
    re = np.real(np.asarray(eigs))
    lo = 1.0 / re.min() if re.min() < 0 else -np.inf
    hi = 1.0 / re.max() if re.max() > 0 else np.inf
    return float(lo), float(hi)


class _Concentrated:
    """``e'e(c) = a - 2 c b + c^2 d`` after partialling out the regressors."""

    def __init__(self, y, Wy, Z, eigs):
        self.n = y.shape[0]
        Q, _ = np.linalg.qr(Z)
        my = y - Q @ (Q.T @ y)
        mwy = Wy - Q @ (Q.T @ Wy)
        self.a = float(my @ my)
        self.b = float(my @ mwy)
        self.d = float(mwy @ mwy)
        self.eigs = np.asarray(eigs)

    def ssr(self, c):
        return self.a - 2.0 * c * self.b + c * c * self.d

    def __call__(self, c) -> float:
        n = self.n
        ssr = self.ssr(c)
        if ssr <= 0:
            return math.inf
        logdet = float(np.sum(np.log(np.abs(1.0 - c * self.eigs))))
        return -0.5 * n * (math.log(2.0 * math.pi) + 1.0 + math.log(ssr / n)) + logdet


def _regressors(dataset: SarDataset, intercept: bool) -> np.ndarray:
    X = dataset.X
    return np.hstack([np.ones((X.shape[0], 1)), X]) if intercept else X


def concentrated_loglik(dataset: SarDataset, W, c, *, eigs=None, intercept: bool = True):
    """Profile log-likelihood at ``c`` (scalar or array)."""
    eigs = weight_eigenvalues(W) if eigs is None else eigs
    f = _Concentrated(dataset.y, W @ dataset.y, _regressors(dataset, intercept), eigs)
    c = np.asarray(c, dtype=float)
    return np.vectorize(f, otypes=[float])(c) if c.ndim else f(float(c))


def _information(W, Z, beta, c, sigma2, eigs):
    """Inverse of the information matrix of ``(beta, c, sigma^2)``."""
    n = W.shape[0]
    dense = W.toarray() if sp.issparse(W) else np.asarray(W, dtype=float)
    G = sla.solve(np.eye(n) - c * dense, dense, check_finite=False)
    lam = np.asarray(eigs)
    g = lam / (1.0 - c * lam)
    tr_g = float(np.real(g.sum()))
    tr_gg = float(np.real((g * g).sum()))
    tr_gtg = float(np.sum(G * G))
    gxb = G @ (Z @ beta)
    k = Z.shape[1]
    info = np.zeros((k + 2, k + 2))
    info[:k, :k] = Z.T @ Z / sigma2
    info[:k, k] = info[k, :k] = Z.T @ gxb / sigma2
    info[k, k] = tr_gg + tr_gtg + gxb @ gxb / sigma2
    info[k, k + 1] = info[k + 1, k] = tr_g / sigma2
    info[k + 1, k + 1] = n / (2.0 * sigma2 * sigma2)
    return np.linalg.inv(info)


def ml_fit(
    dataset: SarDataset,
    base: sp.spmatrix,
    *,
    intercept: bool = True,
    eigs=None,
    max_n: int = MAX_DENSE_N,
    grid_points: int = 200,
    std_errors: bool = True,
) -> MlFit:
    """Maximize the concentrated likelihood over the feasible ``c`` interval.

    ``eigs`` may carry precomputed eigenvalues of ``base`` so repeated fits
    on the same lattice skip the decomposition.
    """
    n = dataset.lattice.n
    if base.shape != (n, n):
        raise ValueError("weight matrix does not match the lattice")
    rs = np.asarray(base.sum(axis=1)).ravel()
    if np.any(np.abs(rs[rs != 0] - 1.0) > 1e-10):
        raise ValueError("base weights must be row-standardized")
    if n > max_n:
        raise CapabilityError(
            f"n={n} exceeds the dense eigenvalue limit {max_n}; use the two-step estimator"
        )
    eigs = weight_eigenvalues(base, max_n) if eigs is None else np.asarray(eigs)
    lo, hi = feasible_interval(eigs)
    lo, hi = max(lo, -1e6), min(hi, 1e6)
    span = hi - lo
    lo_in, hi_in = lo + 1e-9 * span, hi - 1e-9 * span

    Z = _regressors(dataset, intercept)
    Wy = base @ dataset.y
    f = _Concentrated(dataset.y, Wy, Z, eigs)
    grid = np.linspace(lo_in, hi_in, grid_points)
    vals = np.array([f(c) for c in grid])
    i = int(np.argmax(vals))
    a, b = grid[max(i - 1, 0)], grid[min(i + 1, grid_points - 1)]
    res = minimize_scalar(lambda c: -f(c), bounds=(a, b), method="bounded",
                          options={"xatol": C_TOL / 4})
    c_hat = float(res.x)
    if f(c_hat) < vals[i]:
        c_hat = float(grid[i])

    coef, *_ = np.linalg.lstsq(Z, dataset.y - c_hat * Wy, rcond=None)
    e = dataset.y - c_hat * Wy - Z @ coef
    sigma2 = float(e @ e / n)
    se = {}
    if std_errors:
        cov = _information(base, Z, coef, c_hat, sigma2, eigs)
        sd = np.sqrt(np.maximum(np.diag(cov), 0.0))
        k0 = 1 if intercept else 0
        se = {
            "intercept": float(sd[0]) if intercept else math.nan,
            "beta": sd[k0:Z.shape[1]],
            "c": float(sd[Z.shape[1]]),
            "sigma2": float(sd[Z.shape[1] + 1]),
        }
    return MlFit(
        c_hat=c_hat,
        beta_hat=coef[1:] if intercept else coef,
        sigma2_hat=sigma2,
        loglik=float(f(c_hat)),
        std_err=se,
        intercept=float(coef[0]) if intercept else 0.0,
        interval=(lo, hi),
    )


def _sd(xs) -> float:
    return statistics.stdev(xs) if len(xs) > 1 else 0.0


def timing_comparison(
    n_list: Sequence[int],
    m_list: Sequence[int] = (24, 48),
    reps: int = 20,
    *,
    scheme: str = "queen",
    c: float = 0.5,
    seed: int = 0,
    config_kw: Optional[dict] = None,
) -> list[dict]:
    """Mean wall-clock seconds of the two-step estimator (per ``m``) and of ML.

    ML timings include the eigenvalue decomposition; nothing is cached
    between repetitions.
    """
    if reps < 1:
        raise ValueError("reps must be positive")
    config_kw = dict(config_kw or {})
    rows = []
    for n in n_list:
        side = math.isqrt(n)
        if side * side != n:
            raise ValueError(f"n={n} is not a perfect square")
        lat = build_lattice(side, side)
        seeds = np.random.SeedSequence([seed, n]).spawn(reps)
        data = [simulate_dataset(lat, WeightScheme(scheme, c), rng=np.random.default_rng(s))
                for s in seeds]
        for m in m_list:
            times = []
            for t, ds in enumerate(data):
                cfg = EstimatorConfig(m=m, seed=seed + t, **config_kw)
                t0 = time.perf_counter()
                two_step_fit(ds, cfg)
                times.append(time.perf_counter() - t0)
            rows.append({"n": n, "method": "two_step", "m": m,
                         "mean_s": statistics.fmean(times), "sd_s": _sd(times)})
        times = []
        for ds in data:
            t0 = time.perf_counter()
            ml_fit(ds, base_weights(lat, scheme))
            times.append(time.perf_counter() - t0)
        rows.append({"n": n, "method": "ml", "m": "",
                     "mean_s": statistics.fmean(times), "sd_s": _sd(times)})
    return rows
