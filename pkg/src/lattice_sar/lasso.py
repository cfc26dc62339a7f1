"""Adaptive lasso by cyclic coordinate descent.

Minimizes ``||y - b0 - A beta||^2 + lam * sum(psi_j * |beta_j|)`` with an
unpenalized intercept ``b0``, optional sign constraints ``beta_j >= 0`` and an
optional l1-ball ``sum_{j in mask} |beta_j| <= bound``.

Columns are centered and scaled to unit sample variance before the descent;
the penalty weights are rescaled accordingly, so the minimizer is the one of
the objective above on the original scale.  The l1-ball is handled exactly
through its Lagrangian: the multiplier ``mu`` is added to the penalty of the
masked coordinates and found by a safeguarded root search on the ball
constraint.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numba
import numpy as np

from .exceptions import ConvergenceError

__all__ = [
    "PenaltySpec",
    "ConstraintSpec",
    "LassoFit",
    "CVResult",
    "soft_threshold",
    "prior_estimate",
    "adaptive_weights",
    "lambda_max",
    "lambda_grid",
    "solve_path",
    "cross_validate",
]

PSI_FLOOR = 1e-8
RIDGE_DELTA = 1e-3
COND_LIMIT = 1e8
BALL_TOL = 1e-11
POLISH_EVERY = 25


def soft_threshold(z: float, t: float) -> float:
    if t < 0:
        raise ValueError("threshold must be nonnegative")
    return float(np.sign(z) * max(abs(z) - t, 0.0))


@dataclass
class PenaltySpec:
    """Per-coefficient penalty weights and the lambda grid.

    ``psi[j] == inf`` freezes coefficient ``j`` at zero.  When
    ``lambda_grid`` is ``None`` a log-spaced grid from ``lambda_max`` down to
    ``lambda_min_ratio * lambda_max`` is built from the data.
    """

    psi: np.ndarray
    gamma: float = 1.0
    lambda_grid: Optional[np.ndarray] = None
    n_lambda: int = 100
    lambda_min_ratio: float = 1e-4

    def __post_init__(self):
        self.psi = np.asarray(self.psi, dtype=float).reshape(-1)
        if np.any(np.isnan(self.psi)) or np.any(self.psi < 0):
            raise ValueError("penalty weights must be nonnegative (inf allowed)")
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.lambda_grid is not None:
            g = np.asarray(self.lambda_grid, dtype=float).reshape(-1)
            if g.size == 0 or np.any(g < 0) or np.any(np.diff(g) >= 0):
                raise ValueError("lambda grid must be nonnegative and strictly descending")
            self.lambda_grid = g


@dataclass
class ConstraintSpec:
    nonneg: Optional[np.ndarray] = None
    l1_mask: Optional[np.ndarray] = None
    l1_bound: float = 1.0 - 1e-6
    l1_method: str = "exact"

    def __post_init__(self):
        if self.l1_method not in ("exact", "rescale"):
            raise ValueError(f"unknown l1 method {self.l1_method!r}")

    def masks(self, p: int) -> tuple[np.ndarray, np.ndarray]:
        nn = np.zeros(p, bool) if self.nonneg is None else np.asarray(self.nonneg, bool).reshape(-1)
        bm = np.zeros(p, bool) if self.l1_mask is None else np.asarray(self.l1_mask, bool).reshape(-1)
        if nn.shape[0] != p or bm.shape[0] != p:
            raise ValueError(f"constraint masks must have length {p}")
        if bm.any() and not self.l1_bound > 0:
            raise ValueError("l1 bound must be positive")
        return nn, bm


@dataclass
class LassoFit:
    lam: float
    coef: np.ndarray
    intercept: float
    objective: float
    kkt_violation: float
    n_iter: int
    mu: float = 0.0
    max_objective_increase: float = 0.0

    def predict(self, A) -> np.ndarray:
        return np.asarray(A, dtype=float) @ self.coef + self.intercept


@dataclass
class CVResult:
    best_lambda: float
    fit: LassoFit
    lambdas: np.ndarray
    cv_error: np.ndarray
    fold_sizes: list = field(default_factory=list)


def adaptive_weights(prior, gamma: float = 1.0, floor: float = PSI_FLOOR) -> np.ndarray:
    """``1 / |prior|^gamma``; priors below ``floor`` in magnitude give ``inf``."""
    prior = np.abs(np.asarray(prior, dtype=float).reshape(-1))
    with np.errstate(divide="ignore"):
        psi = 1.0 / prior**gamma
    psi[prior < floor] = np.inf
    return psi


def prior_estimate(design, response, *, intercept: bool = True, return_method: bool = False):
    """Initial coefficients for the adaptive weights.

    OLS when there are fewer columns than rows and the normal matrix is well
    conditioned (condition number below 1e8); ridge with penalty
    ``1e-3 * mean(diag(A'A))`` otherwise.
    """
    A = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float).reshape(-1)
    if A.ndim != 2 or A.shape[0] != y.shape[0]:
        raise ValueError("design and response disagree in shape")
    if A.shape[0] < 2:
        raise ValueError("prior estimate needs at least two rows")
    if intercept:
        A = A - A.mean(axis=0)
        y = y - y.mean()
    if not np.any(A):
        raise ValueError("design is degenerate (all zero after centering)")
    N = A.T @ A
    b = A.T @ y
    method = "ols"
    if A.shape[1] < A.shape[0] and np.linalg.cond(N) < COND_LIMIT:
        coef = np.linalg.solve(N, b)
    else:
        method = "ridge"
        delta = RIDGE_DELTA * np.mean(np.diag(N))
        coef = np.linalg.solve(N + delta * np.eye(N.shape[0]), b)
    return (coef, method) if return_method else coef


# ---------------------------------------------------------------------------
# coordinate descent kernel


@numba.njit(cache=True)
def _objective(G, c, yty, beta, Gb, pen):
    val = yty
    for j in range(beta.shape[0]):
        if beta[j] != 0.0:
            val += beta[j] * Gb[j] - 2.0 * c[j] * beta[j] + pen[j] * abs(beta[j])
    return val


@numba.njit(cache=True)
def _kkt(G, c, beta, Gb, pen, nonneg, frozen):
    worst = 0.0
    for j in range(beta.shape[0]):
        if frozen[j]:
            continue
        g = 2.0 * (c[j] - Gb[j])
        if beta[j] == 0.0:
            v = g - pen[j] if nonneg[j] else abs(g) - pen[j]
        elif beta[j] > 0.0:
            v = abs(g - pen[j])
        else:
            v = abs(g + pen[j])
        if v > worst:
            worst = v
    return worst


@numba.njit(cache=True)
def _sweep(G, c, beta, Gb, pen, nonneg, frozen, active_only):
    p = beta.shape[0]
    dmax = 0.0
    for j in range(p):
        if frozen[j]:
            continue
        if active_only and beta[j] == 0.0:
            continue
        gjj = G[j, j]
        old = beta[j]
        rho = c[j] - Gb[j] + gjj * old
        t = 0.5 * pen[j]
        if rho > t:
            new = (rho - t) / gjj
        elif rho < -t and not nonneg[j]:
            new = (rho + t) / gjj
        else:
            new = 0.0
        d = new - old
        if d != 0.0:
            beta[j] = new
            for i in range(p):
                Gb[i] += G[i, j] * d
            if abs(d) > dmax:
                dmax = abs(d)
    return dmax


@numba.njit(cache=True)
def _polish(G, c, yty, pen, nonneg, frozen, beta, Gb):
    """Active-set steps on the current support and signs.

    Solves the sign-fixed quadratic on the support; if some coordinate would
    change sign, moves to the first zero crossing instead (which lowers the
    objective) and drops that coordinate, then repeats.  Returns True once a
    sign-consistent exact solve was taken.
    """
    p = beta.shape[0]
    for _ in range(p + 1):
        idx = np.nonzero(beta)[0]
        s = idx.shape[0]
        if s == 0:
            return False
        H = np.empty((s, s))
        rhs = np.empty(s)
        for a in range(s):
            i = idx[a]
            sg = 1.0 if beta[i] > 0 else -1.0
            rhs[a] = c[i] - 0.5 * pen[i] * sg
            for b in range(s):
                H[a, b] = G[i, idx[b]]
        ev, vec = np.linalg.eigh(H)
        if ev[0] <= 1e-10 * ev[-1]:
            # support larger than the rank: the quadratic is flat along the
            # null vector and the penalty is linear, so walk downhill to the
            # first zero crossing
            d = vec[:, 0].copy()
            slope = 0.0
            for a in range(s):
                slope -= rhs[a] * d[a]
            if slope > 0.0:
                d = -d
            t_cross = np.inf
            hit = -1
            for a in range(s):
                old = beta[idx[a]]
                if d[a] * old < 0.0:
                    t = -old / d[a]
                    if t < t_cross:
                        t_cross = t
                        hit = a
            if hit < 0:
                return False
            trial = beta.copy()
            for a in range(s):
                trial[idx[a]] = beta[idx[a]] + t_cross * d[a]
        else:
            sol = vec @ ((vec.T @ rhs) / ev)
            t_cross = 1.0
            hit = -1
            for a in range(s):
                old = beta[idx[a]]
                if sol[a] * old <= 0.0:
                    t = old / (old - sol[a])
                    if t < t_cross:
                        t_cross = t
                        hit = a
            trial = beta.copy()
            for a in range(s):
                i = idx[a]
                trial[i] = beta[i] + t_cross * (sol[a] - beta[i])
        if hit >= 0:
            trial[idx[hit]] = 0.0
        Gt = G @ trial
        before = _objective(G, c, yty, beta, Gb, pen)
        if _objective(G, c, yty, trial, Gt, pen) > before + 1e-12 * abs(before):
            return False
        beta[:] = trial
        Gb[:] = Gt
        if hit < 0:
            return True
    return False


@numba.njit(cache=True)
def _cd(G, c, yty, pen, nonneg, frozen, beta, tol, kkt_tol, max_iter, polish_every):
    """Cyclic descent with active-set inner loops.

    Every ``polish_every`` sweeps without convergence an exact solve on the
    current support is tried, which rescues badly conditioned problems where
    the support settles long before the values do.

    Returns ``(n_sweeps, kkt, max_objective_increase, converged)``; ``beta``
    is updated in place.
    """
    Gb = G @ beta
    obj = _objective(G, c, yty, beta, Gb, pen)
    max_inc = 0.0
    n = 0
    kkt = np.inf
    while n < max_iter:
        d = _sweep(G, c, beta, Gb, pen, nonneg, frozen, False)
        n += 1
        new_obj = _objective(G, c, yty, beta, Gb, pen)
        if new_obj - obj > max_inc:
            max_inc = new_obj - obj
        obj = new_obj
        if d < tol:
            Gb = G @ beta
            kkt = _kkt(G, c, beta, Gb, pen, nonneg, frozen)
            if kkt <= kkt_tol:
                return n, kkt, max_inc, True
            continue
        inner = 0
        while n < max_iter:
            d = _sweep(G, c, beta, Gb, pen, nonneg, frozen, True)
            n += 1
            inner += 1
            new_obj = _objective(G, c, yty, beta, Gb, pen)
            if new_obj - obj > max_inc:
                max_inc = new_obj - obj
            obj = new_obj
            if d < tol:
                break
            if polish_every > 0 and inner % polish_every == 0:
                _polish(G, c, yty, pen, nonneg, frozen, beta, Gb)
                obj = _objective(G, c, yty, beta, Gb, pen)
                break
    Gb = G @ beta
    kkt = _kkt(G, c, beta, Gb, pen, nonneg, frozen)
    return n, kkt, max_inc, False


@numba.njit(cache=True)
def _cd_rescale(G, c, yty, pen, nonneg, frozen, ball_w, bound, beta, tol, kkt_tol, max_iter):
    """Cyclic descent where each sweep is followed by rescaling the ball block.

    Whenever ``sum(ball_w * |beta|)`` exceeds ``bound`` the masked
    coordinates are scaled by ``(1 - 1e-6) * bound / norm``.  This keeps the
    support but is not an exact projection.  At convergence the KKT residual
    is measured only on coordinates off the constraint boundary.
    """
    p = beta.shape[0]
    Gb = G @ beta
    n = 0
    kkt = np.inf
    target = (1.0 - 1e-6) * bound
    skip = frozen.copy()
    while n < max_iter:
        start = beta.copy()
        _sweep(G, c, beta, Gb, pen, nonneg, frozen, False)
        n += 1
        norm = 0.0
        for j in range(p):
            norm += ball_w[j] * abs(beta[j])
        at_bound = norm > bound
        if at_bound:
            f = target / norm
            for j in range(p):
                if ball_w[j] > 0.0:
                    beta[j] *= f
            Gb = G @ beta
        d = np.max(np.abs(beta - start))
        if d < tol:
            for j in range(p):
                skip[j] = frozen[j] or (at_bound and ball_w[j] > 0.0)
            kkt = _kkt(G, c, beta, Gb, pen, nonneg, skip)
            if kkt <= kkt_tol:
                return n, kkt, 0.0, True
    for j in range(p):
        skip[j] = frozen[j] or ball_w[j] > 0.0
    kkt = _kkt(G, c, beta, Gb, pen, nonneg, skip)
    return n, kkt, 0.0, False


# ---------------------------------------------------------------------------
# problem preparation


class _Problem:
    """Centered, standardized form of one (design, response) pair."""

    def __init__(self, A, y, psi, nonneg, ball, intercept):
        A = np.asarray(A, dtype=float)
        y = np.asarray(y, dtype=float).reshape(-1)
        if A.ndim != 2 or A.shape[0] != y.shape[0]:
            raise ValueError("design and response disagree in shape")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(y))):
            raise ValueError("design and response must be finite")
        n, p = A.shape
        if psi.shape[0] != p:
            raise ValueError(f"psi has length {psi.shape[0]}, design has {p} columns")
        self.intercept = intercept
        self.a_mean = A.mean(axis=0) if intercept else np.zeros(p)
        self.y_mean = y.mean() if intercept else 0.0
        Ac = A - self.a_mean
        yc = y - self.y_mean
        ddof = 1 if n > 1 else 0
        scale = np.sqrt((Ac**2).sum(axis=0) / max(n - ddof, 1))
        frozen = ~np.isfinite(psi) | (scale <= 1e-12 * max(1.0, np.abs(A).max(initial=0.0)))
        self.scale = np.where(frozen, 1.0, scale)
        As = Ac / self.scale
        self.G = np.ascontiguousarray(As.T @ As)
        self.c = As.T @ yc
        self.yty = float(yc @ yc)
        self.frozen = frozen
        self.nonneg = np.ascontiguousarray(nonneg)
        self.ball = ball
        self.psi_std = np.where(frozen, 0.0, psi / self.scale)
        self.ball_std = np.where(ball & ~frozen, 1.0 / self.scale, 0.0)
        self.p = p

    def lambda_max(self) -> float:
        pen = self.psi_std
        ok = ~self.frozen & (pen > 0)
        if not ok.any():
            return 0.0
        g = 2.0 * np.abs(self.c[ok]) / pen[ok]
        if self.nonneg[ok].any():
            g = np.where(self.nonneg[ok], 2.0 * np.maximum(self.c[ok], 0.0) / pen[ok], g)
        return float(g.max())

    def to_original(self, beta_std):
        coef = np.where(self.frozen, 0.0, beta_std / self.scale)
        b0 = self.y_mean - float(self.a_mean @ coef) if self.intercept else 0.0
        return coef, b0

    def ball_norm(self, beta_std) -> float:
        return float(np.abs(beta_std) @ self.ball_std)


def _solve_at(prob: _Problem, lam, beta, bound, tol, kkt_tol, max_iter, method="exact"):
    """Minimizer at one lambda, honoring the l1-ball; ``beta`` is a warm start."""
    base = lam * prob.psi_std
    sweeps = 0
    max_inc = 0.0

    def run(mu, b, tol=tol):
        nonlocal sweeps, max_inc
        pen = base + mu * prob.ball_std
        n, kkt, inc, ok = _cd(prob.G, prob.c, prob.yty, pen, prob.nonneg, prob.frozen, b,
                              tol, kkt_tol, max_iter, POLISH_EVERY)
        sweeps += n
        max_inc = max(max_inc, inc)
        if not ok:
            raise ConvergenceError(
                f"coordinate descent did not converge in {max_iter} sweeps at lambda={lam:.6g}",
                coef=prob.to_original(b)[0], kkt_violation=float(kkt),
            )
        return kkt

    kkt = run(0.0, beta)
    mu = 0.0
    if prob.ball.any() and prob.ball_norm(beta) > bound and method == "rescale":
        n, kkt, _, ok = _cd_rescale(prob.G, prob.c, prob.yty, base, prob.nonneg, prob.frozen,
                                    prob.ball_std, bound, beta, tol, kkt_tol, max_iter)
        sweeps += n
        if not ok:
            raise ConvergenceError(
                f"rescaled descent did not converge in {max_iter} sweeps at lambda={lam:.6g}",
                coef=prob.to_original(beta)[0], kkt_violation=float(kkt),
            )
    elif prob.ball.any() and prob.ball_norm(beta) > bound:
        # f(mu) = ||w(mu)||_1 - bound is nonincreasing in mu; keep the feasible end.
        # The ball sum is only as accurate as the inner solves, hence the tighter tolerance.
        tol = min(tol, BALL_TOL)
        lo, f_lo, b_lo = 0.0, prob.ball_norm(beta) - bound, beta.copy()
        hi = max(1.0, lam) * max(1.0, float(np.max(np.abs(prob.c) * prob.scale)))
        b_hi = beta.copy()
        while True:
            kkt_hi = run(hi, b_hi, tol)
            f_hi = prob.ball_norm(b_hi) - bound
            if f_hi <= 0:
                break
            lo, f_lo, b_lo = hi, f_hi, b_hi.copy()
            hi *= 4.0
        side = 0
        for _ in range(200):
            if f_hi > -1e-12 or hi - lo <= 1e-13 * hi:
                break
            # Illinois variant of regula falsi
            fl = f_lo / 2.0 if side == -1 else f_lo
            fh = f_hi / 2.0 if side == 1 else f_hi
            mid = hi - fh * (hi - lo) / (fh - fl)
            if not lo < mid < hi:
                mid = 0.5 * (lo + hi)
            b_mid = b_hi.copy()
            kkt_mid = run(mid, b_mid, tol)
            f_mid = prob.ball_norm(b_mid) - bound
            if f_mid <= 0:
                hi, f_hi, b_hi, kkt_hi = mid, f_mid, b_mid, kkt_mid
                side = 1
            else:
                lo, f_lo, b_lo = mid, f_mid, b_mid
                side = -1
        beta[:] = b_hi
        mu, kkt = hi, kkt_hi
    return kkt, mu, sweeps, max_inc


def _make_fit(prob: _Problem, lam, beta, kkt, mu, sweeps, max_inc, psi) -> LassoFit:
    coef, b0 = prob.to_original(beta)
    resid_ss = prob.yty - 2.0 * prob.c @ beta + beta @ prob.G @ beta
    finite = np.isfinite(psi) & (coef != 0.0)
    obj = max(resid_ss, 0.0) + lam * float(np.sum(psi[finite] * np.abs(coef[finite])))
    return LassoFit(float(lam), coef, float(b0), float(obj), float(kkt), int(sweeps),
                    float(mu), float(max_inc))


def lambda_max(design, response, psi, *, intercept: bool = True, nonneg=None) -> float:
    """Smallest lambda at which every penalized coefficient is zero."""
    psi = np.asarray(psi, dtype=float).reshape(-1)
    p = psi.shape[0]
    nn = np.zeros(p, bool) if nonneg is None else np.asarray(nonneg, bool)
    return _Problem(design, response, psi, nn, np.zeros(p, bool), intercept).lambda_max()


def lambda_grid(lam_max: float, n_lambda: int = 100, min_ratio: float = 1e-4) -> np.ndarray:
    if lam_max <= 0:
        lam_max = 1.0
    return np.geomspace(lam_max, lam_max * min_ratio, n_lambda)


def solve_path(
    design,
    response,
    penalty: PenaltySpec,
    constraints: Optional[ConstraintSpec] = None,
    *,
    intercept: bool = True,
    tol: float = 1e-7,
    kkt_tol: float = 1e-5,
    max_iter: int = 10_000,
    stop_at: Optional[int] = None,
) -> list[LassoFit]:
    """Warm-started coordinate descent along the lambda grid.

    ``tol`` bounds the largest coordinate change of a sweep on the
    standardized scale; convergence additionally requires the KKT residual
    (absolute gradient units of the standardized problem) below ``kkt_tol``.
    """
    constraints = constraints or ConstraintSpec()
    psi = penalty.psi
    nn, ball = constraints.masks(psi.shape[0])
    prob = _Problem(design, response, psi, nn, ball, intercept)
    grid = penalty.lambda_grid
    if grid is None:
        grid = lambda_grid(prob.lambda_max(), penalty.n_lambda, penalty.lambda_min_ratio)
    last = len(grid) if stop_at is None else min(len(grid), stop_at + 1)
    beta = np.zeros(prob.p)
    lam_zero = prob.lambda_max()
    fits = []
    for lam in grid[:last]:
        if lam >= lam_zero:
            # zero is optimal (and feasible); skip the sweep so rounding cannot leave a 1e-16 residue
            beta[:] = 0.0
            kkt = _kkt(prob.G, prob.c, beta, np.zeros(prob.p), lam * prob.psi_std, prob.nonneg,
                       prob.frozen)
            fits.append(_make_fit(prob, lam, beta, kkt, 0.0, 0, 0.0, psi))
            continue
        kkt, mu, sweeps, inc = _solve_at(prob, lam, beta, constraints.l1_bound, tol, kkt_tol, max_iter,
                                       constraints.l1_method)
        fits.append(_make_fit(prob, lam, beta, kkt, mu, sweeps, inc, psi))
    return fits


def _fold_ids(n_rows: int, folds: int, rng: np.random.Generator) -> np.ndarray:
    ids = np.empty(n_rows, dtype=np.int64)
    for f, part in enumerate(np.array_split(rng.permutation(n_rows), folds)):
        ids[part] = f
    return ids


def cross_validate(
    design,
    response,
    penalty: PenaltySpec,
    constraints: Optional[ConstraintSpec] = None,
    folds: int = 10,
    rng: Optional[np.random.Generator] = None,
    *,
    intercept: bool = True,
    **solver_kw,
) -> CVResult:
    """K-fold choice of lambda by pooled held-out squared error.

    The grid is fixed from the full data; ties go to the larger lambda and
    the returned fit is the full-data solution at the chosen lambda.
    """
    A = np.asarray(design, dtype=float)
    y = np.asarray(response, dtype=float).reshape(-1)
    n = A.shape[0]
    if folds < 2:
        raise ValueError("need at least two folds")
    if n < folds:
        raise ValueError(f"{n} rows cannot be split into {folds} folds")
    rng = np.random.default_rng() if rng is None else rng
    constraints = constraints or ConstraintSpec()
    nn, _ = constraints.masks(penalty.psi.shape[0])
    grid = penalty.lambda_grid
    if grid is None:
        lm = _Problem(A, y, penalty.psi, nn, np.zeros_like(nn), intercept).lambda_max()
        grid = lambda_grid(lm, penalty.n_lambda, penalty.lambda_min_ratio)
    fixed = PenaltySpec(penalty.psi, penalty.gamma, grid)

    ids = _fold_ids(n, folds, rng)
    sse = np.zeros(grid.shape[0])
    sizes = []
    for f in range(folds):
        test = ids == f
        sizes.append(int(test.sum()))
        path = solve_path(A[~test], y[~test], fixed, constraints, intercept=intercept, **solver_kw)
        for i, fit in enumerate(path):
            r = y[test] - fit.predict(A[test])
            sse[i] += r @ r
    cv_error = sse / n
    best = int(np.argmin(cv_error))
    path = solve_path(A, y, fixed, constraints, intercept=intercept, stop_at=best, **solver_kw)
    return CVResult(float(grid[best]), path[best], grid, cv_error, sizes)
