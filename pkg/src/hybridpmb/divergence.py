"""Multi-target KL divergence and Poisson projection of Bernoulli components.

The closed forms are used by the tracker. The discrete-space machinery below
them (:class:`DiscreteSetDistribution`, :func:`convolve`, :func:`set_kl`) is a
brute-force reference: on a ground space of a few points every set integral
is a finite sum, so sub-additivity of the KL divergence under superposition
can be checked numerically.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .gaussian import Gaussian

DEFAULT_NMAX = 6


def bernoulli_poisson_kl(q: float) -> float:
    """KL divergence (nats) from a Bernoulli component to its best Poisson fit."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("existence probability must lie in [0, 1]")
    if q == 1.0:
        return math.inf
    # q + (1-q) log(1-q), written to keep precision near q = 0
    return q + (1.0 - q) * math.log1p(-q)


def project_bernoulli_to_poisson(q: float, f: Gaussian) -> tuple[float, Gaussian]:
    """KL-optimal Poisson intensity for a Bernoulli: mass ``q``, shape ``f``."""
    if not 0.0 <= q <= 1.0:
        raise ValueError("existence probability must lie in [0, 1]")
    return q, f


def bernoulli_poisson_kl_general(q: float, mass: float, shape_kl: float = 0.0) -> float:
    """KL from Bernoulli(q, f) to a Poisson with total mass ``mass`` and shape g,
    where ``shape_kl`` is D(f || g)."""
    if mass <= 0:
        return math.inf if q > 0 else 0.0
    out = (1 - q) * math.log1p(-q) if q < 1 else 0.0
    out += (1 - q) * mass
    if q > 0:
        out += q * (math.log(q) + mass - math.log(mass)) + q * shape_kl
    return out


# -- discrete reference ---------------------------------------------------------


def _multisets(k: int, nmax: int):
    for n in range(nmax + 1):
        yield from itertools.combinations_with_replacement(range(k), n)


def _counts(ms, k):
    c = [0] * k
    for x in ms:
        c[x] += 1
    return tuple(c)


def _multiplicity(counts) -> float:
    """``prod c_i!`` -- the 1/n! set-integral weight times the number of
    orderings of the multiset."""
    return float(np.prod([math.factorial(c) for c in counts]))


@dataclass(frozen=True)
class DiscreteSetDistribution:
    """Set density on a ``k``-point ground space, truncated at ``nmax`` points.

    ``values`` maps a sorted tuple of point indices (a multiset) to the
    density value. The set integral is ``sum_M values[M] / prod_i c_i(M)!``.
    """

    k: int
    values: dict
    nmax: int = DEFAULT_NMAX

    def __post_init__(self):
        if not 1 <= self.k <= 3:
            raise ValueError("ground space limited to 1..3 points")
        clean = {}
        for ms, v in self.values.items():
            ms = tuple(sorted(ms))
            if len(ms) > self.nmax or any(not 0 <= x < self.k for x in ms):
                raise ValueError(f"multiset {ms} outside the space")
            if v < 0:
                raise ValueError("densities must be nonnegative")
            if v > 0:
                clean[ms] = float(v)
        object.__setattr__(self, "values", clean)

    def __getitem__(self, ms) -> float:
        return self.values.get(tuple(sorted(ms)), 0.0)

    def integral(self) -> float:
        return sum(v / _multiplicity(_counts(ms, self.k)) for ms, v in self.values.items())

    def normalized(self) -> "DiscreteSetDistribution":
        s = self.integral()
        return DiscreteSetDistribution(self.k, {m: v / s for m, v in self.values.items()}, self.nmax)

    @classmethod
    def empty(cls, k: int, nmax: int = DEFAULT_NMAX):
        return cls(k, {(): 1.0}, nmax)

    @classmethod
    def bernoulli(cls, q: float, shape, nmax: int = DEFAULT_NMAX):
        shape = np.asarray(shape, dtype=float)
        vals = {(): 1.0 - q}
        for x, p in enumerate(shape):
            vals[(x,)] = q * p
        return cls(len(shape), vals, nmax)

    @classmethod
    def poisson(cls, intensity, nmax: int = DEFAULT_NMAX):
        lam = np.asarray(intensity, dtype=float)
        k = len(lam)
        z = math.exp(-lam.sum())
        vals = {ms: z * float(np.prod(lam[list(ms)])) for ms in _multisets(k, nmax)}
        return cls(k, vals, nmax)


def set_kl(f: DiscreteSetDistribution, g: DiscreteSetDistribution) -> float:
    """Multi-target KL divergence ``D(f || g)``; infinite if f is not dominated by g."""
    if f.k != g.k:
        raise ValueError("ground spaces differ")
    out = 0.0
    for ms, fv in f.values.items():
        gv = g[ms]
        if gv <= 0:
            return math.inf
        out += fv / _multiplicity(_counts(ms, f.k)) * math.log(fv / gv)
    return out


def convolve(g: DiscreteSetDistribution, h: DiscreteSetDistribution, nmax: int | None = None):
    """Superposition density ``f(X) = sum_{W subset X} g(W) h(X - W)``.

    Returns ``(f, lost)`` where ``lost`` is the set-integral mass of terms
    beyond ``nmax`` points.
    """
    if g.k != h.k:
        raise ValueError("ground spaces differ")
    k = g.k
    nmax = max(g.nmax, h.nmax) if nmax is None else nmax
    vals: dict = {}
    lost = 0.0
    for wm, gv in g.values.items():
        wc = _counts(wm, k)
        for ym, hv in h.values.items():
            yc = _counts(ym, k)
            xc = tuple(a + b for a, b in zip(wc, yc))
            # labelled subsets of X that realise the split (W, X - W)
            ways = float(np.prod([math.comb(x, w) for x, w in zip(xc, wc)]))
            term = ways * gv * hv
            xm = tuple(sorted(wm + ym))
            if len(xm) > nmax:
                lost += term / _multiplicity(xc)
                continue
            vals[xm] = vals.get(xm, 0.0) + term
    return DiscreteSetDistribution(k, vals, nmax), lost


def theorem1_check(g, g_approx, h, h_approx, tol: float = 1e-9) -> tuple[float, float]:
    """Return ``(D(g*h || g~*h~), D(g||g~) + D(h||h~))`` and assert the bound."""
    rhs = set_kl(g, g_approx) + set_kl(h, h_approx)
    f, _ = convolve(g, h)
    f_approx, _ = convolve(g_approx, h_approx)
    lhs = set_kl(f, f_approx)
    if not math.isinf(rhs) and lhs > rhs + tol:
        raise AssertionError(f"sub-additivity violated: {lhs} > {rhs}")
    return lhs, rhs
