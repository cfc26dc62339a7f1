"""Cross-sectional resampling and the design matrices of both estimation steps."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import Lattice, NeighborhoodTemplate, interior_sites, window_matrix
from .simulate import SarDataset

__all__ = [
    "FIRST_STEP",
    "SECOND_STEP",
    "R_MIN",
    "ResamplePlan",
    "FirstStepDesign",
    "SecondStepDesign",
    "replication_counts",
    "eligible_sites",
    "sample_sites",
    "instrument_matrix",
    "build_first_step",
    "predict_endogenous",
    "build_second_step",
]

FIRST_STEP = "first"
SECOND_STEP = "second"

# ten folds of three observations
R_MIN = 30


@dataclass(frozen=True)
class ResamplePlan:
    sites: np.ndarray
    template: NeighborhoodTemplate
    stage: str

    @property
    def r(self) -> int:
        return int(self.sites.shape[0])


@dataclass
class FirstStepDesign:
    y: np.ndarray
    Z: np.ndarray


@dataclass
class SecondStepDesign:
    y: np.ndarray
    X: np.ndarray
    Ybreve: np.ndarray

    @property
    def design(self) -> np.ndarray:
        """``[X, Ybreve]``: regressors first, then the template-ordered lags."""
        return np.hstack([self.X, self.Ybreve])


def replication_counts(n: int, m: int) -> tuple[int, int, int]:
    """``(r_min, r_med, r_max)`` for an ``sqrt(n) x sqrt(n)`` grid and template size ``m``."""
    side = math.isqrt(n)
    w = math.isqrt(m + 1)
    if side * side != n:
        raise ValueError(f"n={n} is not a perfect square")
    if w * w != m + 1:
        raise ValueError(f"m + 1 = {m + 1} is not a perfect square")
    r_max = (side - w) ** 2 if side > w else 0
    if r_max < R_MIN:
        raise ValueError(f"grid with n={n} too small for m={m}: r_max={r_max} < {R_MIN}")
    return R_MIN, (R_MIN + r_max) // 2, r_max


def eligible_sites(lattice: Lattice, template: NeighborhoodTemplate, stage: str) -> np.ndarray:
    """Sites whose windows are complete for the stage.

    The second step needs first-step predictions at every neighbor, so its
    border is twice as wide.
    """
    if stage == FIRST_STEP:
        return interior_sites(lattice, template.ring)
    if stage == SECOND_STEP:
        return interior_sites(lattice, 2 * template.ring)
    raise ValueError(f"unknown stage {stage!r}")


def sample_sites(
    eligible,
    r: int,
    rng: np.random.Generator,
    *,
    template: NeighborhoodTemplate,
    stage: str = FIRST_STEP,
    replace: bool = False,
) -> ResamplePlan:
    eligible = np.asarray(eligible, dtype=np.int64).reshape(-1)
    if r < 1:
        raise ValueError("r must be positive")
    if not replace and r > eligible.shape[0]:
        raise ValueError(f"cannot draw r={r} distinct sites from {eligible.shape[0]} eligible")
    sites = rng.choice(eligible, size=r, replace=replace)
    return ResamplePlan(np.asarray(sites, dtype=np.int64), template, stage)


def instrument_matrix(
    dataset: SarDataset, sites, template: NeighborhoodTemplate
) -> np.ndarray:
    """Own-site regressors, then each neighbor's regressors in template order.

    Column ``k + j*k + p`` is regressor ``p`` at template neighbor ``j``.
    """
    sites = np.asarray(sites, dtype=np.int64).reshape(-1)
    win = window_matrix(dataset.lattice, sites, template)
    X = dataset.X
    own = X[sites]
    nbr = X[win].reshape(sites.shape[0], template.m * X.shape[1])
    return np.hstack([own, nbr])


def build_first_step(dataset: SarDataset, plan: ResamplePlan) -> FirstStepDesign:
    if plan.stage != FIRST_STEP:
        raise ValueError("plan is not a first-step plan")
    Z = instrument_matrix(dataset, plan.sites, plan.template)
    return FirstStepDesign(dataset.y[plan.sites].copy(), Z)


def predict_endogenous(
    theta_hat, dataset: SarDataset, template: NeighborhoodTemplate, intercept: float = 0.0
) -> np.ndarray:
    """First-step predictions over the lattice; ``NaN`` where the window is incomplete."""
    theta_hat = np.asarray(theta_hat, dtype=float).reshape(-1)
    l = dataset.k * (template.m + 1)
    if theta_hat.shape[0] != l:
        raise ValueError(f"theta has length {theta_hat.shape[0]}, expected {l}")
    out = np.full(dataset.lattice.n, np.nan)
    sites = eligible_sites(dataset.lattice, template, FIRST_STEP)
    out[sites] = instrument_matrix(dataset, sites, template) @ theta_hat + intercept
    return out


def build_second_step(dataset: SarDataset, ybreve, plan: ResamplePlan) -> SecondStepDesign:
    if plan.stage != SECOND_STEP:
        raise ValueError("plan is not a second-step plan")
    ybreve = np.asarray(ybreve, dtype=float).reshape(-1)
    win = window_matrix(dataset.lattice, plan.sites, plan.template)
    lags = ybreve[win]
    if np.isnan(lags).any():
        bad = int(plan.sites[np.nonzero(np.isnan(lags).any(axis=1))[0][0]])
        raise ValueError(f"missing first-step prediction in the window of site {bad}")
    return SecondStepDesign(dataset.y[plan.sites].copy(), dataset.X[plan.sites].copy(), lags)
