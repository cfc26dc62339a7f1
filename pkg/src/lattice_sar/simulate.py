"""Spatial weight construction and SAR data generation.

Row ``0`` of the lattice is the northern edge and column ``0`` the western
edge, so "east" is ``(0, +1)`` and "south-east" is ``(+1, +1)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .exceptions import ConstraintError, NumericalError
from .lattice import Lattice, NeighborhoodTemplate, neighbor_template

__all__ = [
    "SCHEME_OFFSETS",
    "WeightScheme",
    "SarDataset",
    "build_weights",
    "weights_from_vector",
    "scheme_vector",
    "check_weights",
    "generate_design",
    "simulate_sar",
    "simulate_dataset",
]

SCHEME_OFFSETS: dict[str, tuple[tuple[int, int], ...]] = {
    "queen": ((-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)),
    "rook": ((-1, 0), (0, -1), (0, 1), (1, 0)),
    "anisotropic": ((0, 1), (1, 1)),
}


@dataclass(frozen=True)
class WeightScheme:
    """Exchangeable weighting scheme.

    ``kind`` is one of ``queen`` (q=8), ``rook`` (q=4), ``anisotropic``
    (east and south-east, q=2) or ``vector``. For ``vector`` the weights are
    given explicitly over a template via ``w`` and ``m``; ``c`` is then
    ``sum(w)``.
    """

    kind: str
    c: float = 0.0
    w: Optional[tuple[float, ...]] = None
    m: Optional[int] = None

    def __post_init__(self):
        if self.kind not in (*SCHEME_OFFSETS, "vector"):
            raise ValueError(f"unknown weight scheme {self.kind!r}")
        if self.kind == "vector":
            if self.w is None or self.m is None:
                raise ValueError("vector scheme needs both w and m")
            object.__setattr__(self, "w", tuple(float(v) for v in self.w))
            object.__setattr__(self, "c", float(sum(self.w)))
        if not 0.0 <= self.c < 1.0:
            raise ConstraintError(f"dependence strength c must lie in [0, 1), got {self.c}")

    @property
    def q(self) -> int:
        if self.kind == "vector":
            return int(np.count_nonzero(self.w))
        return len(SCHEME_OFFSETS[self.kind])


@dataclass
class SarDataset:
    lattice: Lattice
    y: np.ndarray
    X: np.ndarray
    scheme: Optional[WeightScheme] = None
    beta_true: Optional[np.ndarray] = None
    sigma: Optional[float] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.y = np.asarray(self.y, dtype=float).reshape(-1)
        self.X = np.asarray(self.X, dtype=float)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        n = self.lattice.n
        if self.y.shape[0] != n or self.X.shape[0] != n:
            raise ValueError(
                f"y has {self.y.shape[0]} and X has {self.X.shape[0]} rows, lattice has {n} sites"
            )

    @property
    def k(self) -> int:
        return self.X.shape[1]

    def true_w(self, template: NeighborhoodTemplate) -> Optional[np.ndarray]:
        """True interior-row weights laid out over ``template``, if known."""
        if self.scheme is None:
            return None
        return scheme_vector(self.scheme, template)


def scheme_vector(scheme: WeightScheme, template: NeighborhoodTemplate) -> np.ndarray:
    """Interior-row weights of ``scheme`` in ``template`` slot order."""
    w = np.zeros(template.m)
    if scheme.kind == "vector":
        src = neighbor_template(scheme.m)
        for off, v in zip(src.offsets, scheme.w):
            if v == 0.0:
                continue
            try:
                w[template.position(off)] = v
            except ValueError:
                raise ValueError(
                    f"scheme offset {off} does not fit in an m={template.m} template"
                ) from None
        return w
    offs = SCHEME_OFFSETS[scheme.kind]
    for off in offs:
        w[template.position(off)] = scheme.c / len(offs)
    return w


def _assemble(lattice: Lattice, offsets, values, renormalize_to: Optional[float]) -> sp.csr_matrix:
    nr, nc = lattice.nrows, lattice.ncols
    rows, cols = np.divmod(np.arange(lattice.n), nc)
    offs = np.asarray(offsets, dtype=np.int64).reshape(-1, 2)
    values = np.asarray(values, dtype=float)
    rr = rows[:, None] + offs[None, :, 0]
    cc = cols[:, None] + offs[None, :, 1]
    ok = (rr >= 0) & (rr < nr) & (cc >= 0) & (cc < nc)
    vals = np.broadcast_to(values, ok.shape).astype(float)
    if renormalize_to is not None:
        cnt = ok.sum(axis=1, keepdims=True)
        vals = np.where(cnt > 0, renormalize_to / np.maximum(cnt, 1), 0.0) * np.ones_like(vals)
    i = np.broadcast_to(np.arange(lattice.n)[:, None], ok.shape)[ok]
    j = (rr * nc + cc)[ok]
    v = vals[ok]
    keep = v != 0.0
    return sp.csr_matrix((v[keep], (i[keep], j[keep])), shape=(lattice.n, lattice.n))


def build_weights(lattice: Lattice, scheme: WeightScheme) -> sp.csr_matrix:
    """Weight matrix of a scheme, every row summing to ``scheme.c``.

    Border rows are renormalized over the neighbors that exist; a row with no
    neighbor inside the grid (the eastern edge under the anisotropic scheme)
    is all zero.
    """
    if not 0.0 <= scheme.c < 1.0:
        raise ConstraintError(f"dependence strength c must lie in [0, 1), got {scheme.c}")
    if scheme.kind == "vector":
        t = neighbor_template(scheme.m)
        return weights_from_vector(lattice, t, np.asarray(scheme.w))
    offs = SCHEME_OFFSETS[scheme.kind]
    if scheme.c == 0.0:
        return sp.csr_matrix((lattice.n, lattice.n))
    return _assemble(lattice, offs, np.full(len(offs), scheme.c / len(offs)), scheme.c)


def weights_from_vector(lattice: Lattice, template: NeighborhoodTemplate, w) -> sp.csr_matrix:
    """Place ``w`` over every site's template window; out-of-grid entries are dropped."""
    w = np.asarray(w, dtype=float).reshape(-1)
    if w.shape[0] != template.m:
        raise ValueError(f"w has length {w.shape[0]}, template has m={template.m}")
    if not np.all(np.isfinite(w)) or np.any(w < 0):
        raise ConstraintError("weights must be finite and nonnegative")
    if w.sum() >= 1.0:
        raise ConstraintError(f"weights must satisfy ||w||_1 < 1, got {w.sum():.12g}")
    return _assemble(lattice, template.offsets, w, None)


def check_weights(W, tol: float = 1e-12) -> None:
    """Raise ``ConstraintError`` unless W has zero diagonal, w_ij >= 0 and row sums < 1."""
    W = sp.csr_matrix(W)
    if np.any(np.abs(W.diagonal()) > tol):
        raise ConstraintError("weight matrix has a nonzero diagonal")
    if W.nnz and W.data.min() < -tol:
        raise ConstraintError("weight matrix has negative entries")
    rs = np.asarray(W.sum(axis=1)).ravel()
    if rs.size and rs.max() >= 1.0:
        raise ConstraintError(f"maximum row sum {rs.max():.6g} is not below 1")


def generate_design(n: int, k: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1 or k < 1:
        raise ValueError("n and k must be positive")
    return rng.standard_normal((n, k))


def simulate_sar(W, X, beta, sigma: float, rng: np.random.Generator, *, return_eps: bool = False):
    """Draw ``Y`` from ``(I - W) Y = X beta + eps`` with Gaussian ``eps``.

    The system is solved by sparse LU; the relative residual is checked
    against 1e-10.
    """
    W = sp.csc_matrix(W)
    n = W.shape[0]
    X = np.asarray(X, dtype=float).reshape(n, -1)
    beta = np.asarray(beta, dtype=float).reshape(-1)
    rs = np.asarray(abs(W).sum(axis=1)).ravel()
    if rs.size and rs.max() >= 1.0:
        raise ConstraintError(f"row sums of W must be below 1, max is {rs.max():.6g}")
    eps = sigma * rng.standard_normal(n)
    rhs = X @ beta + eps
    A = (sp.identity(n, format="csc") - W).tocsc()
    try:
        y = splu(A).solve(rhs)
    except RuntimeError as exc:
        raise NumericalError("I - W is singular", max_row_sum=float(rs.max(initial=0))) from exc
    resid = np.abs(A @ y - rhs).max()
    scale = max(np.abs(y).max(), np.abs(rhs).max(), 1e-300)
    if not np.isfinite(resid) or resid > 1e-10 * scale:
        raise NumericalError(
            "SAR solve residual above tolerance", residual=float(resid), scale=float(scale)
        )
    return (y, eps) if return_eps else y


def simulate_dataset(
    lattice: Lattice,
    scheme: WeightScheme,
    *,
    k: int = 1,
    beta=None,
    sigma: float = 1.0,
    rng: np.random.Generator,
) -> SarDataset:
    """Standard-normal regressors, unit coefficients by default, Gaussian noise."""
    beta = np.ones(k) if beta is None else np.asarray(beta, dtype=float).reshape(-1)
    if beta.shape[0] != k:
        raise ValueError("beta length must equal k")
    X = generate_design(lattice.n, k, rng)
    W = build_weights(lattice, scheme)
    y = simulate_sar(W, X, beta, sigma, rng)
    return SarDataset(lattice, y, X, scheme=scheme, beta_true=beta, sigma=sigma)
