"""Hybrid Poisson / multi-Bernoulli marginal track filter.

The filter state is a Poisson intensity of never-detected targets plus a set
of independent Bernoulli tracks. Every measurement starts a new Bernoulli
whose existence probability comes from the undetected-target intensity near
it; tracks whose existence falls below a threshold are either deleted or
recycled, i.e. folded back into the intensity as a Poisson component of the
same mass and shape.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Iterator, Sequence

import numpy as np

from . import intensity as inten
from .association import AssociationMarginals, AssociationProblem, lbp_marginals
from .divergence import bernoulli_poisson_kl
from .gaussian import (
    CvDynamics,
    Gaussian,
    LinearMeasModel,
    innovations_batch,
    kalman_gain_batch,
    kf_predict_batch,
    symmetrize,
)
from .intensity import DetectionField, GridIntensity, IntensityModel, MeasurementTerms


@dataclass(frozen=True)
class BernoulliTrack:
    id: int
    q: float
    kin: Gaussian
    birth_time: int = 0

    def __post_init__(self):
        if not 0.0 <= self.q <= 1.0:
            raise ValueError("existence probability must lie in [0, 1]")


@dataclass(frozen=True)
class TrackSet:
    """Column-oriented collection of Bernoulli tracks.

    ``support`` optionally holds, per track, the exact grid form of its state
    density as ``(flat_cells, probabilities)``. It is only set for tracks born
    from a grid intensity in the current scan and is dropped on prediction.
    """

    ids: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    q: np.ndarray = field(default_factory=lambda: np.zeros(0))
    means: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    covs: np.ndarray = field(default_factory=lambda: np.zeros((0, 4, 4)))
    birth_time: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    support: tuple = ()

    def __post_init__(self):
        if not self.support:
            object.__setattr__(self, "support", (None,) * len(self.q))
        n = len(self.q)
        if not (len(self.ids) == len(self.means) == len(self.covs) == len(self.birth_time)
                == len(self.support) == n):
            raise ValueError("track columns have inconsistent lengths")

    def __len__(self) -> int:
        return len(self.q)

    def __iter__(self) -> Iterator[BernoulliTrack]:
        for k in range(len(self)):
            yield BernoulliTrack(
                int(self.ids[k]), float(self.q[k]),
                Gaussian(self.means[k], self.covs[k]), int(self.birth_time[k]),
            )

    @classmethod
    def from_tracks(cls, tracks: Sequence[BernoulliTrack]) -> "TrackSet":
        if not tracks:
            return cls()
        return cls(
            np.array([t.id for t in tracks], dtype=np.int64),
            np.array([t.q for t in tracks], dtype=float),
            np.stack([t.kin.mean for t in tracks]),
            np.stack([t.kin.cov for t in tracks]),
            np.array([t.birth_time for t in tracks], dtype=np.int64),
        )

    def subset(self, mask) -> "TrackSet":
        idx = np.nonzero(np.asarray(mask, dtype=bool))[0] if np.asarray(mask).dtype == bool else np.asarray(mask, int)
        return TrackSet(
            self.ids[idx], self.q[idx], self.means[idx], self.covs[idx],
            self.birth_time[idx], tuple(self.support[k] for k in idx),
        )

    def concat(self, other: "TrackSet") -> "TrackSet":
        return TrackSet(
            np.concatenate([self.ids, other.ids]),
            np.concatenate([self.q, other.q]),
            np.concatenate([self.means, other.means]),
            np.concatenate([self.covs, other.covs]),
            np.concatenate([self.birth_time, other.birth_time]),
            self.support + other.support,
        )


@dataclass(frozen=True)
class FilterParams:
    false_alarm_intensity: float = 10.0 / 200.0**2
    survival: float = 0.999
    prune: str = "delete"  # "delete", "recycle" or "budget"
    deletion_threshold: float = 1e-3
    recycle_threshold: float = 0.1
    distortion_budget: float = 0.05
    gate: float = 25.0
    output_existence: float = 0.8
    output_trace: float = 10.0
    dynamic_intensity: bool = True
    region: tuple[float, float] = (-100.0, 100.0)
    lbp_tol: float = 1e-6
    lbp_max_iter: int = 200
    birth_prior_cov: np.ndarray = field(
        default_factory=lambda: inten.UNIFORM_BIRTH_PRIOR_COV.copy(), repr=False, compare=False
    )

    def __post_init__(self):
        if self.prune not in ("delete", "recycle", "budget"):
            raise ValueError(f"unknown prune mode {self.prune!r}")
        for name in ("deletion_threshold", "recycle_threshold", "output_existence"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.false_alarm_intensity < 0:
            raise ValueError("false alarm intensity must be nonnegative")


@dataclass(frozen=True)
class Models:
    dynamics: CvDynamics
    meas: LinearMeasModel
    transition: object  # TransitionKernel, or scalar survival for a uniform intensity
    birth: IntensityModel


@dataclass(frozen=True)
class FilterState:
    tracks: TrackSet
    intensity: IntensityModel
    time: int = 0
    next_id: int = 0
    recycled: TrackSet = field(default_factory=TrackSet)  # removed by the last recycle
    predicted_mass: float | None = None  # undetected mass before the last update

    def __post_init__(self):
        if len(np.unique(self.tracks.ids)) != len(self.tracks):
            raise ValueError("track ids must be unique")


def _assert_q(q: np.ndarray) -> None:
    if q.size and (q.min() < 0.0 or q.max() > 1.0):
        raise AssertionError("existence probability left [0, 1]")


def predict_tracks(tracks: TrackSet, dyn: CvDynamics, survival: float,
                   region: tuple[float, float] = (-100.0, 100.0)) -> TrackSet:
    if len(tracks) == 0:
        return tracks
    means, covs = kf_predict_batch(tracks.means, tracks.covs, dyn)
    lo, hi = region
    keep = ((means[:, 0] >= lo) & (means[:, 0] <= hi) & (means[:, 2] >= lo) & (means[:, 2] <= hi))
    out = TrackSet(tracks.ids, tracks.q * survival, means, covs, tracks.birth_time)
    return out.subset(keep)


def _track_detection(tracks: TrackSet, pd: DetectionField) -> np.ndarray:
    if len(tracks) == 0:
        return np.zeros(0)
    return pd(tracks.means[:, [0, 2]])


def _pair_terms(tracks: TrackSet, Z: np.ndarray, meas: LinearMeasModel, gate: float):
    d, S, Sinv, maha, like = innovations_batch(tracks.means, tracks.covs, meas, Z)
    like = np.where(maha <= gate, like, 0.0)
    return d, Sinv, like


def build_association_problem(state: FilterState, Z, meas: LinearMeasModel,
                              pd: DetectionField, params: FilterParams):
    """Association weights for predicted tracks plus per-measurement birth terms.

    ``state`` holds the predicted tracks and the predicted intensity.
    """
    Z = np.asarray(Z, dtype=float).reshape(-1, 2)
    tracks = state.tracks
    births = [
        inten.measurement_terms(state.intensity, pd, meas, z, params.birth_prior_cov) for z in Z
    ]
    mu = np.array([b.intensity for b in births])
    kappa = params.false_alarm_intensity + mu
    kappa = np.where(kappa > 0, kappa, np.finfo(float).tiny)
    if len(tracks) == 0 or len(Z) == 0:
        w = np.zeros((len(tracks), len(Z)))
    else:
        _, _, like = _pair_terms(tracks, Z, meas, params.gate)
        w = (tracks.q * _track_detection(tracks, pd))[:, None] * like
    w_miss = 1.0 - tracks.q * _track_detection(tracks, pd)
    return AssociationProblem(np.clip(w_miss, 0.0, None), w, kappa), births


def update_tracks(tracks: TrackSet, marginals: AssociationMarginals, Z, meas: LinearMeasModel,
                  pd: DetectionField, gate: float = 25.0) -> TrackSet:
    """Average each track over its marginal association events."""
    n = len(tracks)
    if n == 0:
        return tracks
    Z = np.asarray(Z, dtype=float).reshape(-1, 2)
    q = tracks.q
    pdet = _track_detection(tracks, pd)
    denom = 1.0 - q * pdet
    q_miss = np.divide(q * (1.0 - pdet), denom, out=np.zeros(n), where=denom > 0)
    w0 = marginals.p_miss * q_miss
    P = marginals.p
    q_new = np.clip(w0 + P.sum(axis=1), 0.0, 1.0)

    means, covs = tracks.means.copy(), tracks.covs.copy()
    if len(Z):
        d, Sinv, _ = _pair_terms(tracks, Z, meas, gate)
        K, post_cov = kalman_gain_batch(tracks.covs, Sinv, meas)
        post_means = tracks.means[:, None, :] + np.einsum("nij,nmj->nmi", K, d)
        ok = q_new > 0
        tot = np.where(ok, w0 + P.sum(axis=1), 1.0)
        a0 = w0 / tot
        a = P / tot[:, None]
        mean = a0[:, None] * tracks.means + np.einsum("nm,nmi->ni", a, post_means)
        d0 = tracks.means - mean
        dj = post_means - mean[:, None, :]
        cov = (
            a0[:, None, None] * (tracks.covs + np.einsum("ni,nj->nij", d0, d0))
            + a.sum(axis=1)[:, None, None] * post_cov
            + np.einsum("nm,nmi,nmj->nij", a, dj, dj)
        )
        means[ok] = mean[ok]
        covs[ok] = symmetrize(cov[ok])
    _assert_q(q_new)
    return TrackSet(tracks.ids, q_new, means, covs, tracks.birth_time)


def spawn_new_tracks(Z, births: Sequence[MeasurementTerms], marginals: AssociationMarginals,
                     params: FilterParams, time: int = 0, next_id: int = 0) -> tuple[TrackSet, int]:
    """One Bernoulli per measurement not explained by an existing track.

    Returns the new tracks and the next free id.
    """
    rows = []
    for j, b in enumerate(births):
        if b.density is None or b.intensity <= 0:
            continue
        qa = b.intensity / (params.false_alarm_intensity + b.intensity)
        q = float(marginals.p_new[j]) * qa
        if q <= 0:
            continue
        support = None if b.cells is None else (b.cells, b.fractions)
        rows.append((q, b.density, support))
    if not rows:
        return TrackSet(), next_id
    k = len(rows)
    new = TrackSet(
        np.arange(next_id, next_id + k, dtype=np.int64),
        np.clip(np.array([r[0] for r in rows]), 0.0, 1.0),
        np.stack([r[1].mean for r in rows]),
        np.stack([r[1].cov for r in rows]),
        np.full(k, time, dtype=np.int64),
        tuple(r[2] for r in rows),
    )
    return new, next_id + k


def recycle_tracks(model: GridIntensity, tracks: TrackSet) -> GridIntensity:
    """Fold tracks into the intensity as Poisson components of mass ``q``."""
    if len(tracks) == 0:
        return model
    cells, masses = [], []
    for k in range(len(tracks)):
        q = float(tracks.q[k])
        if q <= 0:
            continue
        sup = tracks.support[k]
        if sup is None:
            c, w = inten.gaussian_cell_weights(model.spec, Gaussian(tracks.means[k], tracks.covs[k]))
        else:
            c, w = sup
        cells.append(c)
        masses.append(q * w)
    if not cells:
        return model
    return inten.deposit_cells(model, np.concatenate(cells), np.concatenate(masses))


def recycle_and_prune(state: FilterState, params: FilterParams) -> FilterState:
    tracks = state.tracks
    q = tracks.q
    if params.prune == "delete":
        keep = q >= params.deletion_threshold
        return replace(state, tracks=tracks.subset(keep), recycled=TrackSet())
    if not isinstance(state.intensity, GridIntensity):
        raise ValueError("recycling needs a grid intensity to deposit onto")
    if params.prune == "recycle":
        drop = q < params.recycle_threshold
    else:
        order = np.argsort(q, kind="stable")
        cum = np.cumsum([bernoulli_poisson_kl(float(x)) for x in q[order]])
        drop = np.zeros(len(q), dtype=bool)
        drop[order[cum <= params.distortion_budget]] = True
    gone = tracks.subset(drop)
    lam = recycle_tracks(state.intensity, gone)
    return replace(state, tracks=tracks.subset(~drop), intensity=lam, recycled=gone)


def extract_estimates(state: FilterState, params: FilterParams) -> np.ndarray:
    t = state.tracks
    if len(t) == 0:
        return np.zeros((0, 4))
    trace = np.trace(t.covs, axis1=1, axis2=2)
    ok = (t.q >= params.output_existence) & (trace < params.output_trace)
    return t.means[ok]


def step(state: FilterState, Z, models: Models, params: FilterParams,
         pd: DetectionField) -> FilterState:
    """One full predict / associate / update / spawn / recycle cycle."""
    Z = np.asarray(Z, dtype=float).reshape(-1, 2)
    lam_pred = (
        inten.predict(state.intensity, models.transition, models.birth)
        if params.dynamic_intensity else state.intensity
    )
    tracks = predict_tracks(state.tracks, models.dynamics, params.survival, params.region)
    predicted = FilterState(tracks, lam_pred, state.time, state.next_id)
    prob, births = build_association_problem(predicted, Z, models.meas, pd, params)
    marg = lbp_marginals(prob, params.lbp_tol, params.lbp_max_iter)
    tracks = update_tracks(tracks, marg, Z, models.meas, pd, params.gate)
    new, next_id = spawn_new_tracks(Z, births, marg, params, state.time + 1, state.next_id)
    lam_post = inten.miss_update(lam_pred, pd) if params.dynamic_intensity else lam_pred
    out = FilterState(tracks.concat(new), lam_post, state.time + 1, next_id,
                      predicted_mass=inten.total_mass(lam_pred))
    out = recycle_and_prune(out, params)
    _assert_q(out.tracks.q)
    return out


# -- track log ----------------------------------------------------------------

TRACK_LOG_HEADER = ["time", "track_id", "q", "px", "vx", "py", "vy", "cov_trace", "recycled"]


def track_log_rows(state: FilterState) -> list[list]:
    rows = []
    for ts, flag in ((state.tracks, 0), (state.recycled, 1)):
        for k in range(len(ts)):
            m = ts.means[k]
            rows.append([state.time, int(ts.ids[k]), float(ts.q[k]), *map(float, m),
                         float(np.trace(ts.covs[k])), flag])
    return rows


def write_track_log(rows, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRACK_LOG_HEADER)
        for r in rows:
            w.writerow([repr(x) if isinstance(x, float) else x for x in r])
