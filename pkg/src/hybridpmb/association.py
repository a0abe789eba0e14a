"""Marginal track-to-measurement association probabilities for one scan.

A joint hypothesis assigns every track to at most one measurement and every
measurement to at most one track. Its weight is the product of ``w_miss[i]``
over unassigned tracks, ``w[i, j]`` over assigned pairs and ``kappa[j]`` over
measurements left to the false-alarm / new-target explanation.
"""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass

import numpy as np

log = logging.getLogger(__name__)

MAX_ENUMERATION = 10


@dataclass(frozen=True)
class AssociationProblem:
    w_miss: np.ndarray  # (n,)
    w: np.ndarray  # (n, m)
    kappa: np.ndarray  # (m,)

    def __post_init__(self):
        w_miss = np.asarray(self.w_miss, dtype=float).reshape(-1)
        kappa = np.asarray(self.kappa, dtype=float).reshape(-1)
        w = np.asarray(self.w, dtype=float).reshape(w_miss.size, kappa.size)
        for name, a in (("w_miss", w_miss), ("w", w), ("kappa", kappa)):
            if not np.all(np.isfinite(a)) or np.any(a < 0):
                raise ValueError(f"{name} must be finite and nonnegative")
        if np.any(kappa <= 0):
            raise ValueError("kappa must be strictly positive")
        object.__setattr__(self, "w_miss", w_miss)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "kappa", kappa)

    @property
    def n(self) -> int:
        return self.w_miss.size

    @property
    def m(self) -> int:
        return self.kappa.size


@dataclass(frozen=True)
class AssociationMarginals:
    p: np.ndarray  # (n, m)
    p_miss: np.ndarray  # (n,)
    p_new: np.ndarray  # (m,)
    converged: bool = True
    iterations: int = 0


def exact_marginals(prob: AssociationProblem) -> AssociationMarginals:
    """Marginals by enumerating every one-to-one partial matching."""
    n, m = prob.n, prob.m
    if n + m > MAX_ENUMERATION:
        raise ValueError(f"enumeration limited to n + m <= {MAX_ENUMERATION}")
    p = np.zeros((n, m))
    p_miss = np.zeros(n)
    p_new = np.zeros(m)
    total = 0.0
    # a[i] = measurement index of track i, or -1 for a miss
    for a in itertools.product(range(-1, m), repeat=n):
        used = [j for j in a if j >= 0]
        if len(used) != len(set(used)):
            continue
        weight = 1.0
        for i, j in enumerate(a):
            weight *= prob.w_miss[i] if j < 0 else prob.w[i, j]
        free = [j for j in range(m) if j not in used]
        weight *= float(np.prod(prob.kappa[free]))
        if weight == 0.0:
            continue
        total += weight
        for i, j in enumerate(a):
            if j < 0:
                p_miss[i] += weight
            else:
                p[i, j] += weight
        p_new[free] += weight
    if total <= 0:
        raise ValueError("every joint hypothesis has zero weight")
    return AssociationMarginals(p / total, p_miss / total, p_new / total)


def lbp_marginals(
    prob: AssociationProblem, tol: float = 1e-6, max_iter: int = 200, damping: float = 0.0
) -> AssociationMarginals:
    """Approximate marginals by loopy belief propagation.

    Weights are normalized so that a miss and a false alarm each have unit
    weight; messages then live on the (track, measurement) pairs:

        mu[i, j] = wn[i, j] / (1 + sum_{j' != j} wn[i, j'] nu[i, j'])
        nu[i, j] = 1 / (1 + sum_{i' != i} mu[i', j])
    """
    n, m = prob.n, prob.m
    if n == 0 or m == 0:
        return AssociationMarginals(np.zeros((n, m)), np.ones(n), np.ones(m))

    # tracks with zero miss weight would need every pair; guard with a floor
    w_miss = np.maximum(prob.w_miss, 1e-300)
    wn = prob.w / (w_miss[:, None] * prob.kappa[None, :])
    nu = np.ones((n, m))
    nu[wn == 0] = 0.0
    active = wn > 0

    converged = not active.any()
    it = 0
    while not converged and it < max_iter:
        it += 1
        prod = wn * nu
        mu = wn / (1.0 + prod.sum(axis=1, keepdims=True) - prod)
        col = mu.sum(axis=0, keepdims=True)
        nu_new = np.where(active, 1.0 / (1.0 + col - mu), 0.0)
        if damping:
            nu_new = (1 - damping) * nu_new + damping * nu
        delta = float(np.max(np.abs(nu_new - nu)))
        nu = nu_new
        converged = delta < tol
    if not converged:
        log.warning("LBP did not converge in %d iterations", max_iter)

    prod = wn * nu
    denom = 1.0 + prod.sum(axis=1)
    p = prod / denom[:, None]
    p_miss = 1.0 / denom
    colsum = p.sum(axis=0)
    # fixed points are consistent; absorb residual drift into the column view
    over = colsum > 1.0
    if over.any():
        p[:, over] /= colsum[over]
        colsum = p.sum(axis=0)
        p_miss = 1.0 - p.sum(axis=1)
    p_new = np.clip(1.0 - colsum, 0.0, 1.0)
    return AssociationMarginals(p, p_miss, p_new, converged, it)
