"""Linear-Gaussian primitives for the constant-velocity model.

State order is ``[px, vx, py, vy]``; measurements are ``[px, py]``.
Single-object functions take :class:`Gaussian` values, the ``*_batch``
variants work on stacked means ``(n, 4)`` and covariances ``(n, 4, 4)`` and
are what the tracker uses internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

PSD_TOL = 1e-9


def symmetrize(cov: np.ndarray) -> np.ndarray:
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def check_psd(cov: np.ndarray, tol: float = PSD_TOL) -> None:
    cov = np.asarray(cov)
    if np.max(np.abs(cov - np.swapaxes(cov, -1, -2)), initial=0.0) >= 1e-10:
        raise ValueError("covariance is not symmetric")
    if cov.size and np.min(np.linalg.eigvalsh(cov)) < -tol:
        raise ValueError("covariance is not positive semidefinite")


@dataclass(frozen=True)
class Gaussian:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float).reshape(mean.size, mean.size)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


@dataclass(frozen=True)
class CvDynamics:
    """Nearly-constant-velocity motion, discretized white-noise acceleration.

    ``q`` is the velocity diffusion (length^2 / step^3).
    """

    q: float = 0.01
    T: float = 1.0
    F: np.ndarray = field(init=False, repr=False)
    Q: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.q < 0:
            raise ValueError("diffusion must be nonnegative")
        T = self.T
        f = np.array([[1.0, T], [0.0, 1.0]])
        qa = self.q * np.array([[T**3 / 3, T**2 / 2], [T**2 / 2, T]])
        z = np.zeros((2, 2))
        object.__setattr__(self, "F", np.block([[f, z], [z, f]]))
        object.__setattr__(self, "Q", np.block([[qa, z], [z, qa]]))

    @property
    def axis_F(self) -> np.ndarray:
        return self.F[:2, :2]

    @property
    def axis_Q(self) -> np.ndarray:
        return self.Q[:2, :2]


@dataclass(frozen=True)
class LinearMeasModel:
    R: np.ndarray = field(default_factory=lambda: np.eye(2))
    H: np.ndarray = field(
        default_factory=lambda: np.array([[1.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0]])
    )

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float)
        if not np.allclose(R, R.T) or np.min(np.linalg.eigvalsh(R)) <= 0:
            raise ValueError("R must be symmetric positive definite")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "H", np.asarray(self.H, dtype=float))

    @property
    def is_diagonal(self) -> bool:
        return bool(np.all(self.R == np.diag(np.diag(self.R))))


def _innovation_cov(cov: np.ndarray, model: LinearMeasModel) -> np.ndarray:
    H = model.H
    return symmetrize(H @ cov @ H.T + model.R)


def gaussian_eval(g: Gaussian, model: LinearMeasModel, z) -> float:
    """Density of ``z`` under the measurement-space projection of ``g``."""
    S = _innovation_cov(g.cov, model)
    det = np.linalg.det(S)
    if not np.isfinite(det) or det <= 0:
        raise np.linalg.LinAlgError("singular innovation covariance")
    d = np.asarray(z, dtype=float) - model.H @ g.mean
    if not np.all(np.isfinite(d)):
        return 0.0
    maha = d @ np.linalg.solve(S, d)
    return float(np.exp(-0.5 * maha) / (2 * np.pi * np.sqrt(det)))


def kf_predict(g: Gaussian, dyn: CvDynamics) -> Gaussian:
    F = dyn.F
    return Gaussian(F @ g.mean, symmetrize(F @ g.cov @ F.T + dyn.Q))


def kf_update(g: Gaussian, model: LinearMeasModel, z) -> tuple[Gaussian, float]:
    """Kalman posterior and the predictive likelihood of ``z``."""
    like = gaussian_eval(g, model, z)
    H = model.H
    S = _innovation_cov(g.cov, model)
    K = np.linalg.solve(S, H @ g.cov).T
    mean = g.mean + K @ (np.asarray(z, dtype=float) - H @ g.mean)
    # Joseph form keeps the result PSD when R is huge or the prior is nearly singular.
    A = np.eye(g.mean.size) - K @ H
    cov = symmetrize(A @ g.cov @ A.T + K @ model.R @ K.T)
    return Gaussian(mean, cov), like


def moment_match(components: Iterable[tuple[float, Gaussian]]) -> Gaussian:
    comps = list(components)
    w = np.array([c[0] for c in comps], dtype=float)
    if np.any(w < 0):
        raise ValueError("negative mixture weight")
    if w.sum() <= 0:
        raise ValueError("mixture weights sum to zero")
    means = np.stack([c[1].mean for c in comps])
    covs = np.stack([c[1].cov for c in comps])
    mean, cov = moment_match_arrays(w, means, covs)
    return Gaussian(mean, cov)


def moment_match_arrays(w: np.ndarray, means: np.ndarray, covs: np.ndarray):
    """Moment-match a mixture given as weight, mean and covariance arrays."""
    w = np.asarray(w, dtype=float) / np.sum(w)
    mean = w @ means
    d = means - mean
    cov = np.einsum("k,kij->ij", w, covs) + np.einsum("k,ki,kj->ij", w, d, d)
    return mean, symmetrize(cov)


# -- batched variants ---------------------------------------------------------


def kf_predict_batch(means: np.ndarray, covs: np.ndarray, dyn: CvDynamics):
    F = dyn.F
    return means @ F.T, symmetrize(F @ covs @ F.T + dyn.Q)


def innovations_batch(means, covs, model: LinearMeasModel, Z: np.ndarray):
    """Pairwise innovation terms for ``n`` tracks and ``m`` measurements.

    Returns ``(d, S, Sinv, maha, like)`` with ``d`` of shape ``(n, m, 2)``,
    ``S``/``Sinv`` of shape ``(n, 2, 2)`` and ``maha``/``like`` of shape ``(n, m)``.
    """
    H = model.H
    S = symmetrize(H @ covs @ H.T + model.R)
    Sinv = np.linalg.inv(S)
    det = np.linalg.det(S)
    pred = means @ H.T
    d = Z[None, :, :] - pred[:, None, :]
    maha = np.einsum("nmi,nij,nmj->nm", d, Sinv, d)
    like = np.exp(-0.5 * maha) / (2 * np.pi * np.sqrt(det))[:, None]
    return d, S, Sinv, maha, like


def kalman_gain_batch(covs, Sinv, model: LinearMeasModel):
    """Gains ``(n, 4, 2)`` and (shared per track) posterior covariances."""
    H = model.H
    K = covs @ H.T @ Sinv
    A = np.eye(covs.shape[-1]) - K @ H
    post = A @ covs @ np.swapaxes(A, -1, -2) + K @ model.R @ np.swapaxes(K, -1, -2)
    return K, symmetrize(post)


def stack(gaussians: Sequence[Gaussian]):
    if not gaussians:
        return np.zeros((0, 4)), np.zeros((0, 4, 4))
    return np.stack([g.mean for g in gaussians]), np.stack([g.cov for g in gaussians])
