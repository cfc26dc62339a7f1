"""Two-step adaptive lasso with cross-sectional resampling.

Step one regresses the sampled responses on the regressors of each site and
its ``m`` template neighbors (instruments) and predicts the response on the
whole interior.  Step two regresses the sampled responses on their own
regressors and on the predicted responses of their template neighbors, with
the neighbor weights constrained to ``w >= 0`` and ``sum(w) < 1``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from joblib import Parallel, delayed

from .exceptions import ConvergenceError
from .lasso import ConstraintSpec, PenaltySpec, adaptive_weights, cross_validate, prior_estimate
from .lattice import Lattice, NeighborhoodTemplate, neighbor_template, window_matrix
from .resample import (
    FIRST_STEP,
    SECOND_STEP,
    build_first_step,
    build_second_step,
    eligible_sites,
    predict_endogenous,
    sample_sites,
)
from .simulate import SCHEME_OFFSETS, SarDataset, WeightScheme, weights_from_vector

__all__ = [
    "W_BOUND",
    "EstimatorConfig",
    "TwoStepFit",
    "BootstrapResult",
    "max_replications",
    "two_step_fit",
    "fit_with_fixed_weights",
    "bootstrap",
    "reconstruct_weights",
    "fitted_values",
    "unit_scheme_vector",
]

log = logging.getLogger(__name__)

W_BOUND = 1.0 - 1e-6


def max_replications(lattice: Lattice, m: int) -> int:
    """``(nrows - sqrt(m+1)) * (ncols - sqrt(m+1))``; ``(sqrt(n) - sqrt(m+1))^2`` on square grids."""
    side = neighbor_template(m).side
    return max(lattice.nrows - side, 0) * max(lattice.ncols - side, 0)


@dataclass(frozen=True)
class EstimatorConfig:
    """Knobs of one two-step fit.

    ``r1=None`` uses the maximum replication count; ``r2=None`` uses
    ``min(r1, #second-step eligible sites)``.  ``replace=True`` samples sites
    with replacement (bootstrap mode).
    """

    m: int = 24
    r1: Optional[int] = None
    r2: Optional[int] = None
    gamma: float = 1.0
    folds: int = 10
    seed: int = 0
    intercept: bool = True
    replace: bool = False
    n_lambda: int = 100
    lambda_min_ratio: float = 1e-4
    w_bound: float = W_BOUND
    l1_method: str = "rescale"

    def __post_init__(self):
        neighbor_template(self.m)
        if self.folds < 2:
            raise ValueError("folds must be at least 2")
        for name in ("r1", "r2"):
            r = getattr(self, name)
            if r is not None and r < self.folds * 3:
                raise ValueError(f"{name}={r} is below folds*3={self.folds * 3}")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if not 0 < self.w_bound < 1:
            raise ValueError("w_bound must lie in (0, 1)")

    @property
    def template(self) -> NeighborhoodTemplate:
        return neighbor_template(self.m)


@dataclass
class TwoStepFit:
    m: int
    theta_hat: np.ndarray
    theta_intercept: float
    beta_hat: np.ndarray
    w_hat: np.ndarray
    intercept: float
    lambda1: float
    lambda2: float
    ybreve: np.ndarray
    scheme: Optional[str] = None
    diagnostics: dict = field(default_factory=dict)

    @property
    def c_hat(self) -> float:
        return float(np.sum(self.w_hat))


@dataclass
class BootstrapResult:
    B: int
    mean_coef: dict
    std_err: dict
    fits: list
    failures: int = 0


def _resolve_r(dataset: SarDataset, config: EstimatorConfig) -> tuple[int, int, np.ndarray, np.ndarray]:
    t = config.template
    e1 = eligible_sites(dataset.lattice, t, FIRST_STEP)
    e2 = eligible_sites(dataset.lattice, t, SECOND_STEP)
    r1 = config.r1
    if r1 is None:
        r1 = min(max_replications(dataset.lattice, config.m), e1.shape[0])
    r2 = config.r2 if config.r2 is not None else min(r1, e2.shape[0])
    for r, name in ((r1, "r1"), (r2, "r2")):
        if r < config.folds:
            raise ValueError(f"{name}={r} too small for {config.folds}-fold cross-validation")
    return r1, r2, e1, e2


def _first_step(dataset, config, rng, r1, e1, penalty_kw, diag):
    t = config.template
    plan = sample_sites(e1, r1, rng, template=t, stage=FIRST_STEP, replace=config.replace)
    d1 = build_first_step(dataset, plan)
    prior, method = prior_estimate(d1.Z, d1.y, intercept=config.intercept, return_method=True)
    psi = adaptive_weights(prior, config.gamma)
    cv = cross_validate(d1.Z, d1.y, PenaltySpec(psi, config.gamma, **penalty_kw), None,
                        config.folds, rng, intercept=config.intercept)
    ybreve = predict_endogenous(cv.fit.coef, dataset, t, cv.fit.intercept)
    diag.update(first_prior=method, first_cv_error=cv.cv_error, first_n_iter=cv.fit.n_iter,
                first_kkt=cv.fit.kkt_violation, first_sites=plan.sites)
    return cv, ybreve


def _second_step(dataset, config, rng, r2, e2, ybreve, lag_vector, penalty_kw, diag):
    t = config.template
    plan = sample_sites(e2, r2, rng, template=t, stage=SECOND_STEP, replace=config.replace)
    d2 = build_second_step(dataset, ybreve, plan)
    k = dataset.k
    lags = d2.Ybreve if lag_vector is None else (d2.Ybreve @ lag_vector)[:, None]
    A = np.hstack([d2.X, lags])
    p = A.shape[1]
    prior, method = prior_estimate(A, d2.y, intercept=config.intercept, return_method=True)
    psi = adaptive_weights(prior, config.gamma)
    wmask = np.arange(p) >= k
    cons = ConstraintSpec(nonneg=wmask, l1_mask=wmask, l1_bound=config.w_bound,
                          l1_method=config.l1_method)
    cv = cross_validate(A, d2.y, PenaltySpec(psi, config.gamma, **penalty_kw), cons,
                        config.folds, rng, intercept=config.intercept)
    diag.update(second_prior=method, second_cv_error=cv.cv_error, second_n_iter=cv.fit.n_iter,
                second_kkt=cv.fit.kkt_violation, second_mu=cv.fit.mu, second_sites=plan.sites,
                r1=diag.get("r1"), r2=r2)
    return cv


def _run(dataset: SarDataset, config: EstimatorConfig, lag_vector, scheme_name) -> TwoStepFit:
    r1, r2, e1, e2 = _resolve_r(dataset, config)
    rng = np.random.default_rng(config.seed)
    penalty_kw = dict(n_lambda=config.n_lambda, lambda_min_ratio=config.lambda_min_ratio)
    diag = {"r1": r1, "r2": r2}
    cv1, ybreve = _first_step(dataset, config, rng, r1, e1, penalty_kw, diag)
    cv2 = _second_step(dataset, config, rng, r2, e2, ybreve, lag_vector, penalty_kw, diag)
    k = dataset.k
    coef = cv2.fit.coef
    if lag_vector is None:
        w_hat = coef[k:].copy()
    else:
        w_hat = coef[k] * lag_vector
    return TwoStepFit(
        m=config.m,
        theta_hat=cv1.fit.coef,
        theta_intercept=cv1.fit.intercept,
        beta_hat=coef[:k].copy(),
        w_hat=w_hat,
        intercept=cv2.fit.intercept,
        lambda1=cv1.best_lambda,
        lambda2=cv2.best_lambda,
        ybreve=ybreve,
        scheme=scheme_name,
        diagnostics=diag,
    )


def two_step_fit(dataset: SarDataset, config: EstimatorConfig) -> TwoStepFit:
    return _run(dataset, config, None, None)


def unit_scheme_vector(scheme: WeightScheme | str, template: NeighborhoodTemplate) -> np.ndarray:
    """Template-ordered vector of a fixed scheme normalized to unit sum."""
    kind = scheme if isinstance(scheme, str) else scheme.kind
    if kind == "vector":
        w = np.zeros(template.m)
        src = neighbor_template(scheme.m)
        for off, v in zip(src.offsets, scheme.w):
            if v:
                w[template.position(off)] = v
        s = w.sum()
        return w / s if s > 0 else w
    offs = SCHEME_OFFSETS[kind]
    v = np.zeros(template.m)
    for off in offs:
        v[template.position(off)] = 1.0 / len(offs)
    return v


def fit_with_fixed_weights(
    dataset: SarDataset, scheme: WeightScheme | str, config: EstimatorConfig
) -> TwoStepFit:
    """Same pipeline, but step two has one spatial regressor ``sum_j v_j Ybreve_j``.

    Its coefficient is the dependence strength ``c`` of the fixed scheme; it is
    constrained to ``[0, w_bound]``.  ``w_hat`` is reported as ``c_hat * v``.
    """
    v = unit_scheme_vector(scheme, config.template)
    name = scheme if isinstance(scheme, str) else scheme.kind
    return _run(dataset, config, v, name)


def _one_boot(dataset, config, scheme, seed):
    cfg = replace(config, seed=int(seed), replace=True)
    try:
        if scheme is None:
            return two_step_fit(dataset, cfg)
        return fit_with_fixed_weights(dataset, scheme, cfg)
    except (ConvergenceError, np.linalg.LinAlgError) as exc:
        log.warning("bootstrap iteration with seed %d failed: %s", seed, exc)
        return None


def bootstrap(
    dataset: SarDataset,
    config: EstimatorConfig,
    B: int,
    *,
    scheme: WeightScheme | str | None = None,
    seeds=None,
    jobs: int = 1,
) -> BootstrapResult:
    """``B`` two-step fits on fresh with-replacement site samples.

    Iteration seeds derive from ``config.seed`` unless given explicitly.
    Failed iterations are dropped and counted.
    """
    if B < 2:
        raise ValueError("bootstrap needs B >= 2")
    if seeds is None:
        children = np.random.SeedSequence(config.seed).spawn(B)
        seeds = [int(ch.generate_state(1)[0]) for ch in children]
    if len(seeds) != B:
        raise ValueError("need one seed per bootstrap iteration")
    if jobs == 1:
        fits = [_one_boot(dataset, config, scheme, s) for s in seeds]
    else:
        fits = Parallel(n_jobs=jobs)(delayed(_one_boot)(dataset, config, scheme, s) for s in seeds)
    ok = [f for f in fits if f is not None]
    if len(ok) < 2:
        raise RuntimeError(f"only {len(ok)} of {B} bootstrap iterations succeeded")
    stacks = {
        "beta": np.array([f.beta_hat for f in ok]),
        "w": np.array([f.w_hat for f in ok]),
        "c": np.array([f.c_hat for f in ok]),
        "intercept": np.array([f.intercept for f in ok]),
    }
    mean = {key: v.mean(axis=0) for key, v in stacks.items()}
    se = {key: v.std(axis=0, ddof=1) for key, v in stacks.items()}
    return BootstrapResult(B, mean, se, ok, failures=B - len(ok))


def reconstruct_weights(fit: TwoStepFit, lattice: Lattice, template: Optional[NeighborhoodTemplate] = None):
    template = template or neighbor_template(fit.m)
    return weights_from_vector(lattice, template, fit.w_hat)


def fitted_values(
    fit: TwoStepFit, dataset: SarDataset, template: Optional[NeighborhoodTemplate] = None
) -> tuple[np.ndarray, np.ndarray]:
    """``(y_hat, valid)`` over all sites.

    ``y_hat = b0 + X beta + sum_j w_j Ybreve(neighbor_j)`` where every neighbor
    has a first-step prediction (``valid``); elsewhere only the exogenous part.
    """
    template = template or neighbor_template(fit.m)
    lat = dataset.lattice
    yhat = fit.intercept + dataset.X @ fit.beta_hat
    valid = np.zeros(lat.n, dtype=bool)
    ring2 = 2 * template.ring
    if 2 * ring2 < min(lat.nrows, lat.ncols):
        sites = eligible_sites(lat, template, SECOND_STEP)
        lags = fit.ybreve[window_matrix(lat, sites, template)]
        ok = ~np.isnan(lags).any(axis=1)
        yhat[sites[ok]] += lags[ok] @ fit.w_hat
        valid[sites[ok]] = True
    return yhat, valid
