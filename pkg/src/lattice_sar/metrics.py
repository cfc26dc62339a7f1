"""Accuracy of estimated weights and predictions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .lattice import NeighborhoodTemplate

__all__ = [
    "ZERO_TOL",
    "WeightEval",
    "FrequencyMap",
    "mae",
    "support_stats",
    "recovery_frequency",
    "rmse",
]

ZERO_TOL = 1e-10


def _pair(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(a, dtype=float).reshape(-1)
    b = np.asarray(b, dtype=float).reshape(-1)
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.shape[0]} vs {b.shape[0]}")
    return a, b


@dataclass
class WeightEval:
    """Support recovery of one estimate; ``nan`` marks an undefined rate."""

    mae: float
    specificity: float
    sensitivity: float
    support_hat: np.ndarray
    support_true: np.ndarray


@dataclass
class FrequencyMap:
    template: NeighborhoodTemplate
    counts: np.ndarray
    total: int

    def grid(self) -> np.ndarray:
        """Counts laid out on the ``side x side`` window; the center cell is -1."""
        side = self.template.side
        h = side // 2
        out = np.full((side, side), -1, dtype=np.int64)
        for (dr, dc), cnt in zip(self.template.offsets, self.counts):
            out[dr + h, dc + h] = cnt
        return out


def mae(w_hat, w_true) -> float:
    """``||w_hat - w_true||_1 / m``."""
    a, b = _pair(w_hat, w_true)
    if a.size == 0:
        raise ValueError("empty weight vectors")
    return float(np.abs(a - b).sum() / a.size)


def support_stats(w_hat, w_true, zero_tol: float = ZERO_TOL) -> WeightEval:
    a, b = _pair(w_hat, w_true)
    if zero_tol < 0:
        raise ValueError("zero_tol must be nonnegative")
    s_hat = np.abs(a) > zero_tol
    s_true = np.abs(b) > zero_tol
    n_zero = int((~s_true).sum())
    n_nonzero = int(s_true.sum())
    spec = float((~s_hat & ~s_true).sum() / n_zero) if n_zero else math.nan
    sens = float((s_hat & s_true).sum() / n_nonzero) if n_nonzero else math.nan
    return WeightEval(mae(a, b), spec, sens, s_hat, s_true)


def recovery_frequency(fits, template: NeighborhoodTemplate | None = None,
                       zero_tol: float = ZERO_TOL) -> FrequencyMap:
    """Per-template-cell count of nonzero estimates across ``fits`` (a list of w_hat)."""
    W = np.asarray([np.asarray(w, dtype=float).reshape(-1) for w in fits])
    if W.ndim != 2 or W.shape[0] == 0:
        raise ValueError("need a non-empty list of equal-length weight vectors")
    counts = (np.abs(W) > zero_tol).sum(axis=0).astype(np.int64)
    if template is None:
        from .lattice import neighbor_template

        template = neighbor_template(W.shape[1])
    if template.m != W.shape[1]:
        raise ValueError("template size does not match the weight vectors")
    return FrequencyMap(template, counts, int(W.shape[0]))


def rmse(y_hat, y) -> float:
    a, b = _pair(y_hat, y)
    if a.size == 0:
        raise ValueError("empty vectors")
    return float(np.linalg.norm(a - b) / math.sqrt(a.size))
