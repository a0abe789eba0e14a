"""OSPA distance and Monte Carlo averaging."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .intensity import DetectionField


@dataclass(frozen=True)
class OspaParams:
    p: float = 2.0
    c: float = 10.0

    def __post_init__(self):
        if self.p < 1 or self.c <= 0:
            raise ValueError("OSPA needs p >= 1 and c > 0")


def optimal_assignment(cost) -> tuple[np.ndarray, np.ndarray, float]:
    """Minimum-cost one-to-one assignment of the smaller side.

    Returns ``(rows, cols, total_cost)``.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.size == 0:
        return np.zeros(0, int), np.zeros(0, int), 0.0
    rows, cols = linear_sum_assignment(cost)
    return rows, cols, float(cost[rows, cols].sum())


def ospa(A, B, params: OspaParams = OspaParams()) -> float:
    """OSPA distance between two finite sets of state vectors (rows)."""
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    A = A.reshape(len(A), -1) if A.size else np.zeros((0, 1))
    B = B.reshape(len(B), -1) if B.size else np.zeros((0, 1))
    m, n = len(A), len(B)
    if m == 0 and n == 0:
        return 0.0
    if m > n:
        A, B, m, n = B, A, n, m
    c, p = params.c, params.p
    if m == 0:
        return float(c)
    d = np.sqrt(((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=-1))
    cost = np.minimum(d, c) ** p
    _, _, total = optimal_assignment(cost)
    val = ((total + c**p * (n - m)) / n) ** (1.0 / p)
    return float(min(val, c))


def mospa_curve(values) -> tuple[np.ndarray, np.ndarray]:
    """Per-time mean and standard error over runs of a ``(runs, times)`` array."""
    v = np.asarray(values, dtype=float)
    if v.ndim != 2 or v.size == 0:
        raise ValueError("need a non-empty (runs, times) array")
    mean = v.mean(axis=0)
    if v.shape[0] < 2:
        return mean, np.zeros_like(mean)
    return mean, v.std(axis=0, ddof=1) / np.sqrt(v.shape[0])


def coverage_filtered_truth(truth, pd: DetectionField) -> np.ndarray:
    """Targets (rows ``[px, vx, py, vy]``) with nonzero detection probability."""
    truth = np.asarray(truth, dtype=float).reshape(-1, 4)
    if len(truth) == 0:
        return truth
    return truth[pd(truth[:, [0, 2]]) > 0]
