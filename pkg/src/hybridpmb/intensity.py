"""Poisson intensity of undetected targets.

Two representations are supported:

* :class:`UniformIntensity` -- a single density constant over the state
  region (the stationary, homogeneous case);
* :class:`GridIntensity` -- a piecewise-constant density on a regular 4-D
  grid of cells ``(px, vx, py, vy)``, propagated with a Monte Carlo
  transition kernel.

Grid values are densities (targets per unit state hypervolume); the mass in a
cell is ``value * cell_volume``.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.special import ndtr

from .gaussian import CvDynamics, Gaussian, LinearMeasModel, kf_update

KERNEL_FORMAT_VERSION = 1

# Prior used to approximate a uniform intensity when initialising a track.
UNIFORM_BIRTH_PRIOR_COV = np.diag([100.0**2 / 3, 1 / 12, 100.0**2 / 3, 1 / 12])


# -- detection fields ---------------------------------------------------------


class DetectionField:
    """Probability of detection as a function of target position."""

    constant: float | None = None

    def __call__(self, positions) -> np.ndarray:
        raise NotImplementedError

    def at(self, x, y) -> float:
        return float(self(np.array([[x, y]], dtype=float))[0])


@dataclass(frozen=True)
class ConstantDetection(DetectionField):
    pd: float

    def __post_init__(self):
        if not 0.0 <= self.pd <= 1.0:
            raise ValueError("detection probability must lie in [0, 1]")

    @property
    def constant(self) -> float:
        return self.pd

    def __call__(self, positions) -> np.ndarray:
        positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        return np.full(len(positions), self.pd)


@dataclass(frozen=True)
class ConeDetection(DetectionField):
    """``pd`` inside a closed cone of ``half_angle`` about the heading, else 0."""

    position: tuple[float, float]
    heading: tuple[float, float]
    pd: float = 0.3
    half_angle: float = math.pi / 4

    constant = None

    def __call__(self, positions) -> np.ndarray:
        positions = np.asarray(positions, dtype=float).reshape(-1, 2)
        d = positions - np.asarray(self.position, dtype=float)
        hx, hy = self.heading
        rel = np.arctan2(d[:, 1], d[:, 0]) - math.atan2(hy, hx)
        rel = np.abs((rel + np.pi) % (2 * np.pi) - np.pi)
        inside = (rel <= self.half_angle + 1e-12) | np.all(d == 0, axis=1)
        return np.where(inside, self.pd, 0.0)


# -- grid geometry ------------------------------------------------------------


def _check_uniform_axis(centers: np.ndarray, name: str) -> float:
    if centers.ndim != 1 or centers.size < 2:
        raise ValueError(f"{name} needs at least two centres")
    steps = np.diff(centers)
    if np.any(steps <= 0) or not np.allclose(steps, steps[0], rtol=1e-9, atol=1e-12):
        raise ValueError(f"{name} must be strictly increasing with uniform spacing")
    return float(steps[0])


@dataclass(frozen=True)
class GridSpec:
    pos_centers: np.ndarray
    vel_centers: np.ndarray
    pos_region: tuple[float, float] = (-100.0, 100.0)
    vel_region: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        pc = np.asarray(self.pos_centers, dtype=float)
        vc = np.asarray(self.vel_centers, dtype=float)
        object.__setattr__(self, "pos_centers", pc)
        object.__setattr__(self, "vel_centers", vc)
        object.__setattr__(self, "_dp", _check_uniform_axis(pc, "position axis"))
        object.__setattr__(self, "_dv", _check_uniform_axis(vc, "velocity axis"))

    @classmethod
    def default(cls) -> "GridSpec":
        # velocity edge cells absorb the clamped random walk, so the grid's
        # velocity region spans them completely
        return cls(np.linspace(-100, 100, 51), np.linspace(-1, 1, 6), vel_region=(-1.2, 1.2))

    @property
    def dp(self) -> float:
        return self._dp

    @property
    def dv(self) -> float:
        return self._dv

    @property
    def n_pos(self) -> int:
        return self.pos_centers.size

    @property
    def n_vel(self) -> int:
        return self.vel_centers.size

    @property
    def n_axis(self) -> int:
        """Cells in one (position, velocity) axis pair."""
        return self.n_pos * self.n_vel

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return (self.n_pos, self.n_vel, self.n_pos, self.n_vel)

    @property
    def n_cells(self) -> int:
        return self.n_axis**2

    @property
    def cell_volume(self) -> float:
        return self.dp**2 * self.dv**2

    @property
    def region_volume(self) -> float:
        (a, b), (c, d) = self.pos_region, self.vel_region
        return (b - a) ** 2 * (d - c) ** 2

    @property
    def position_area(self) -> float:
        a, b = self.pos_region
        return (b - a) ** 2

    def key(self) -> dict:
        return {
            "pos_centers": self.pos_centers.tolist(),
            "vel_centers": self.vel_centers.tolist(),
            "pos_region": list(self.pos_region),
            "vel_region": list(self.vel_region),
        }

    def __eq__(self, other):
        return isinstance(other, GridSpec) and self.key() == other.key()

    def __hash__(self):
        return hash(json.dumps(self.key()))

    def axis_overlap(self) -> tuple[np.ndarray, np.ndarray]:
        """Fraction of each position / velocity cell inside the region."""
        return (
            _overlap(self.pos_centers, self.dp, self.pos_region),
            _overlap(self.vel_centers, self.dv, self.vel_region),
        )

    def cell_centers(self) -> np.ndarray:
        """All cell centres as an ``(n_cells, 4)`` array in flat order."""
        g = np.meshgrid(
            self.pos_centers, self.vel_centers, self.pos_centers, self.vel_centers,
            indexing="ij",
        )
        return np.stack([a.ravel() for a in g], axis=1)

    def pos_index(self, p) -> np.ndarray:
        return np.clip(np.rint((np.asarray(p) - self.pos_centers[0]) / self.dp), 0, self.n_pos - 1).astype(int)

    def vel_index(self, v) -> np.ndarray:
        return np.clip(np.rint((np.asarray(v) - self.vel_centers[0]) / self.dv), 0, self.n_vel - 1).astype(int)


def _overlap(centers, width, region) -> np.ndarray:
    lo = np.maximum(centers - width / 2, region[0])
    hi = np.minimum(centers + width / 2, region[1])
    return np.clip(hi - lo, 0.0, None) / width


# -- intensity models ---------------------------------------------------------


@dataclass(frozen=True)
class UniformIntensity:
    density: float
    volume: float = 200.0**2 * 2.0**2
    position_area: float = 200.0**2

    def __post_init__(self):
        if not (self.density >= 0 and np.isfinite(self.density)):
            raise ValueError("intensity must be finite and nonnegative")


@dataclass(frozen=True)
class GridIntensity:
    spec: GridSpec
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float).reshape(-1)
        if v.size != self.spec.n_cells:
            raise ValueError("values do not match the grid size")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("intensity must be finite and nonnegative")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, spec: GridSpec) -> "GridIntensity":
        return cls(spec, np.zeros(spec.n_cells))

    def as_array(self) -> np.ndarray:
        return self.values.reshape(self.spec.shape)

    def position_marginal(self) -> np.ndarray:
        """Expected number of targets per position cell, shape ``(n_pos, n_pos)``."""
        return self.as_array().sum(axis=(1, 3)) * self.spec.cell_volume


IntensityModel = UniformIntensity | GridIntensity


def total_mass(model: IntensityModel) -> float:
    if isinstance(model, UniformIntensity):
        return model.density * model.volume
    return float(model.values.sum() * model.spec.cell_volume)


def scaled(model: IntensityModel, factor: float) -> IntensityModel:
    if isinstance(model, UniformIntensity):
        return UniformIntensity(model.density * factor, model.volume, model.position_area)
    return GridIntensity(model.spec, model.values * factor)


def steady_state_uniform(birth_total, survival, domain_volume=160000.0, position_area=40000.0):
    """Intensity reached by repeated prediction with no sensor operating."""
    if not 0.0 <= survival < 1.0:
        raise ValueError("survival must lie in [0, 1) for a steady state to exist")
    if birth_total < 0:
        raise ValueError("birth rate must be nonnegative")
    mass = birth_total / (1.0 - survival)
    return UniformIntensity(mass / domain_volume, domain_volume, position_area)


def uniform_fill(spec: GridSpec, mass: float) -> GridIntensity:
    """Grid approximation of ``mass`` targets spread uniformly over the region.

    Boundary cells straddling the region edge carry their cell-average
    density, so the total mass is exact.
    """
    op, ov = spec.axis_overlap()
    axis = np.outer(op, ov).ravel()
    return GridIntensity(spec, (mass / spec.region_volume) * np.outer(axis, axis).ravel())


def box_birth(spec: GridSpec, center, rate: float) -> GridIntensity:
    """Births at ``rate`` per step, uniform over the position cell holding
    ``center`` and uniform over the velocity region."""
    ip, iq = spec.pos_index(center[0]), spec.pos_index(center[1])
    _, ov = spec.axis_overlap()
    vol = spec.dp**2 * (spec.vel_region[1] - spec.vel_region[0]) ** 2
    arr = np.zeros(spec.shape)
    arr[ip, :, iq, :] = (rate / vol) * np.outer(ov, ov)
    return GridIntensity(spec, arr.ravel())


# -- transition kernel --------------------------------------------------------


@dataclass(frozen=True)
class TransitionKernel:
    """Product of identical per-axis Monte Carlo kernels.

    ``axis[a, b]`` is the probability that a target in axis cell
    ``a = ip * n_vel + iv`` moves to axis cell ``b`` in one step without
    leaving the region. Survival is applied separately.
    """

    spec: GridSpec
    axis: sparse.csr_matrix
    survival: float = 1.0
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "axis", sparse.csr_matrix(self.axis))
        object.__setattr__(self, "_axis_T", self.axis.T.tocsr())

    def propagate(self, values: np.ndarray) -> np.ndarray:
        """Motion-only push-forward of a flat value vector (no survival)."""
        n = self.spec.n_axis
        V = values.reshape(n, n)
        out = self._axis_T @ V  # x-axis
        out = (self._axis_T @ out.T).T  # y-axis
        return np.ascontiguousarray(out).reshape(-1)

    def axis_rowmass(self) -> np.ndarray:
        return np.asarray(self.axis.sum(axis=1)).ravel()

    def rowmass(self) -> np.ndarray:
        r = self.axis_rowmass()
        return np.outer(r, r).ravel()

    def effective_survival(self) -> np.ndarray:
        return self.survival * self.rowmass()

    def to_sparse(self) -> sparse.csr_matrix:
        """Full ``(n_cells, n_cells)`` source-to-destination matrix."""
        return sparse.kron(self.axis, self.axis, format="csr")

    def save(self, path) -> None:
        a = self.axis.tocoo()
        np.savez_compressed(
            path,
            format_version=np.array(KERNEL_FORMAT_VERSION),
            meta=np.array(json.dumps(self.meta)),
            row=a.row, col=a.col, data=a.data,
            n=np.array(self.spec.n_axis),
            survival=np.array(self.survival),
        )

    @classmethod
    def load(cls, path, spec: GridSpec) -> "TransitionKernel":
        with np.load(path, allow_pickle=False) as f:
            if int(f["format_version"]) != KERNEL_FORMAT_VERSION:
                raise ValueError(f"unsupported kernel cache format in {path}")
            n = int(f["n"])
            if n != spec.n_axis:
                raise ValueError("cached kernel does not match grid")
            meta = json.loads(str(f["meta"]))
            if meta.get("grid") != spec.key():
                raise ValueError("cached kernel was built for a different grid")
            axis = sparse.coo_matrix((f["data"], (f["row"], f["col"])), shape=(n, n))
            return cls(spec, axis.tocsr(), float(f["survival"]), meta)


def kernel_cache_key(spec: GridSpec, dyn: CvDynamics, samples_per_cell: int, seed: int) -> str:
    payload = json.dumps(
        {
            "v": KERNEL_FORMAT_VERSION,
            "grid": spec.key(),
            "q": dyn.q,
            "T": dyn.T,
            "samples": int(samples_per_cell),
            "seed": int(seed),
        },
        sort_keys=True,
    )
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def build_kernel_monte_carlo(
    spec: GridSpec,
    dyn: CvDynamics,
    survival: float = 1.0,
    samples_per_cell: int = 1000,
    rng_seed: int = 0,
) -> TransitionKernel:
    """Estimate the cell-to-cell transition kernel by simulation.

    Samples are drawn uniformly within each cell (intersected with the
    region), pushed through one step of the continuous dynamics, and binned
    by destination cell. Samples whose position leaves the region are lost;
    velocities beyond the grid are clamped to the edge cell. The two motion
    axes are independent, so one axis kernel is estimated and the full kernel
    is its Kronecker square. The same uniform offsets and noise draws are used
    for every source cell, which makes interior rows exact translates of one
    another.
    """
    if samples_per_cell < 1:
        raise ValueError("samples_per_cell must be at least 1")
    rng = np.random.default_rng(rng_seed)
    N = int(samples_per_cell)
    half = (N + 1) // 2
    # stratified position offsets; antithetic velocity offsets and noise so the
    # empirical displacement distribution is exactly symmetric
    up = (np.arange(2 * half) + 0.5) / (2 * half)
    uv = rng.random(half)
    noise = rng.standard_normal((half, 2)) @ np.linalg.cholesky(dyn.axis_Q + 1e-300 * np.eye(2)).T
    if dyn.q == 0:
        noise[:] = 0.0
    uv = np.concatenate([uv, 1.0 - uv[::-1]])
    noise = np.concatenate([noise, -noise[::-1]])

    pc, vc = spec.pos_centers, spec.vel_centers
    # samples cover the whole cell; those starting outside the region are rejected
    p0 = (pc[:, None] + (up[None, :] - 0.5) * spec.dp)[:, None, :]
    v0 = (vc[:, None] + (uv[None, :] - 0.5) * spec.dv)[None, :, :]
    inside0 = (p0 >= spec.pos_region[0]) & (p0 <= spec.pos_region[1])
    inside0 = inside0 & (v0 >= spec.vel_region[0]) & (v0 <= spec.vel_region[1])
    F = dyn.axis_F
    p1 = F[0, 0] * p0 + F[0, 1] * v0 + noise[:, 0]
    v1 = F[1, 1] * v0 + noise[:, 1]
    p1, v1, inside0 = np.broadcast_arrays(p1, v1, inside0)
    alive = inside0 & (p1 >= spec.pos_region[0]) & (p1 <= spec.pos_region[1])
    dst = spec.pos_index(p1) * spec.n_vel + spec.vel_index(v1)

    n = spec.n_axis
    src = np.broadcast_to(np.arange(n).reshape(spec.n_pos, spec.n_vel, 1), dst.shape)
    kept = inside0.reshape(n, -1).sum(axis=1).astype(float)
    if np.any(kept == 0):
        raise ValueError("a grid cell lies entirely outside the region")
    counts = sparse.coo_matrix(
        (alive.ravel().astype(float), (src.ravel(), dst.ravel())), shape=(n, n)
    ).tocsr()
    counts.sum_duplicates()
    counts.eliminate_zeros()
    counts = sparse.diags(1.0 / kept) @ counts
    meta = {
        "grid": spec.key(),
        "q": dyn.q,
        "T": dyn.T,
        "samples_per_cell": N,
        "seed": int(rng_seed),
        "key": kernel_cache_key(spec, dyn, N, rng_seed),
    }
    return TransitionKernel(spec, counts.tocsr(), float(survival), meta)


def cached_kernel(spec, dyn, survival=1.0, samples_per_cell=1000, rng_seed=0, cache_dir=None):
    """Load the kernel from ``cache_dir`` if present, else build and store it."""
    if cache_dir is None:
        return build_kernel_monte_carlo(spec, dyn, survival, samples_per_cell, rng_seed)
    path = Path(cache_dir) / f"kernel-{kernel_cache_key(spec, dyn, samples_per_cell, rng_seed)}.npz"
    if path.exists():
        k = TransitionKernel.load(path, spec)
        return TransitionKernel(spec, k.axis, float(survival), k.meta)
    k = build_kernel_monte_carlo(spec, dyn, survival, samples_per_cell, rng_seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    k.save(path)
    return k


def steady_state_birth(kernel: TransitionKernel, target: GridIntensity) -> tuple[GridIntensity, int]:
    """Birth density making ``target`` a fixed point of :func:`predict`.

    Solves ``b = target - Ps * K^T target`` and clips negative cells to zero;
    the number of clipped cells is returned alongside.
    """
    b = target.values - kernel.survival * kernel.propagate(target.values)
    neg = int(np.count_nonzero(b < 0))
    return GridIntensity(target.spec, np.clip(b, 0.0, None)), neg


# -- operations ---------------------------------------------------------------


def predict(model: IntensityModel, transition, birth: IntensityModel) -> IntensityModel:
    """PHD-style prediction of the undetected-target intensity.

    ``transition`` is a :class:`TransitionKernel` for grids or a scalar
    survival probability for the uniform model.
    """
    if isinstance(model, UniformIntensity):
        if not isinstance(birth, UniformIntensity):
            raise TypeError("uniform intensity needs a uniform birth")
        ps = transition.survival if isinstance(transition, TransitionKernel) else float(transition)
        return UniformIntensity(birth.density + ps * model.density, model.volume, model.position_area)
    if not isinstance(transition, TransitionKernel):
        raise TypeError("grid intensity needs a transition kernel")
    if not (isinstance(birth, GridIntensity) and birth.spec == model.spec == transition.spec):
        raise ValueError("grid mismatch between intensity, birth and kernel")
    out = birth.values + transition.survival * transition.propagate(model.values)
    return GridIntensity(model.spec, np.clip(out, 0.0, None))


def grid_detection(spec: GridSpec, pd: DetectionField) -> np.ndarray:
    """Detection probability at each position cell centre, shape ``(n_pos, n_pos)``."""
    if pd.constant is not None:
        return np.full((spec.n_pos, spec.n_pos), float(pd.constant))
    X, Y = np.meshgrid(spec.pos_centers, spec.pos_centers, indexing="ij")
    return pd(np.stack([X.ravel(), Y.ravel()], axis=1)).reshape(spec.n_pos, spec.n_pos)


def miss_update(model: IntensityModel, pd: DetectionField) -> IntensityModel:
    if isinstance(model, UniformIntensity):
        if pd.constant is None:
            raise ValueError("uniform intensity requires a constant detection probability")
        return UniformIntensity((1.0 - pd.constant) * model.density, model.volume, model.position_area)
    spec = model.spec
    miss = 1.0 - grid_detection(spec, pd)
    arr = model.as_array() * miss[:, None, :, None]
    return GridIntensity(spec, arr.ravel())


@dataclass(frozen=True)
class MeasurementTerms:
    """Everything a measurement needs from the undetected-target intensity."""

    intensity: float  # expected new-target measurements per unit area at z
    density: Gaussian | None  # moment-matched birth density (None if intensity is 0)
    cells: np.ndarray | None = None  # grid form of the density: flat cell indices
    fractions: np.ndarray | None = None  # ... and their probability masses


def gate_radius(spec: GridSpec, meas: LinearMeasModel) -> float:
    return 6.0 * math.sqrt(float(np.max(np.linalg.eigvalsh(meas.R)))) + spec.dp * math.sqrt(2) / 2


def gated_position_cells(spec: GridSpec, meas: LinearMeasModel, z):
    """Indices ``(ix, iy)`` of position cells whose centre is within the gate of ``z``."""
    r = gate_radius(spec, meas)
    pc = spec.pos_centers
    ix = np.nonzero(np.abs(pc - z[0]) <= r)[0]
    iy = np.nonzero(np.abs(pc - z[1]) <= r)[0]
    if ix.size == 0 or iy.size == 0:
        return ix, iy, np.zeros((ix.size, iy.size), dtype=bool)
    d2 = (pc[ix, None] - z[0]) ** 2 + (pc[None, iy] - z[1]) ** 2
    return ix, iy, d2 <= r * r


def _truncnorm_moments(a, b, mu, sigma):
    """Mass, mean and variance of N(mu, sigma^2) restricted to [a, b]."""
    al, be = (a - mu) / sigma, (b - mu) / sigma
    mass = ndtr(be) - ndtr(al)
    # upper tail differences are more accurate when both bounds are positive
    upper = al > 0
    mass = np.where(upper, ndtr(-al) - ndtr(-be), mass)
    phi_a = np.exp(-0.5 * al**2) / math.sqrt(2 * math.pi)
    phi_b = np.exp(-0.5 * be**2) / math.sqrt(2 * math.pi)
    safe = np.where(mass > 0, mass, 1.0)
    r = (phi_a - phi_b) / safe
    mean = mu + sigma * r
    var = sigma**2 * (1 + (al * phi_a - be * phi_b) / safe - r**2)
    return mass, mean, np.clip(var, 0.0, None)


def measurement_terms(model: IntensityModel, pd: DetectionField, meas: LinearMeasModel, z,
                      birth_prior_cov=UNIFORM_BIRTH_PRIOR_COV) -> MeasurementTerms:
    """New-target measurement intensity at ``z`` and the matching birth density.

    Grid cells hold piecewise-constant densities, so the likelihood is
    integrated exactly over each cell's position box; this needs a diagonal
    measurement covariance.
    """
    z = np.asarray(z, dtype=float)
    if isinstance(model, UniformIntensity):
        p = float(pd(z[None, :])[0])
        mu = p * model.density * model.volume / model.position_area
        if mu <= 0:
            return MeasurementTerms(0.0, None)
        g, _ = kf_update(Gaussian(np.zeros(4), birth_prior_cov), meas, z)
        return MeasurementTerms(mu, g)

    if not meas.is_diagonal:
        raise ValueError("grid intensity requires a diagonal measurement covariance")
    spec = model.spec
    ix, iy, mask = gated_position_cells(spec, meas, z)
    if not mask.any():
        return MeasurementTerms(0.0, None)
    sx, sy = math.sqrt(meas.R[0, 0]), math.sqrt(meas.R[1, 1])
    h = spec.dp / 2
    px, py = spec.pos_centers[ix], spec.pos_centers[iy]
    mx, ex, vx = _truncnorm_moments(px - h, px + h, z[0], sx)
    my, ey, vy = _truncnorm_moments(py - h, py + h, z[1], sy)

    pdet = grid_detection(spec, pd)[np.ix_(ix, iy)] if pd.constant is None else float(pd.constant)
    box_like = np.outer(mx, my) * mask * pdet * spec.dv**2  # (nx, ny)
    lam = model.as_array()[np.ix_(ix, np.arange(spec.n_vel), iy, np.arange(spec.n_vel))]
    w = lam * box_like[:, None, :, None]  # (nx, nv, ny, nv): expected measurements
    mu = float(w.sum())
    if not mu > 0:
        return MeasurementTerms(0.0, None)
    frac = w / mu

    # per-cell conditional moments: truncated normal in position, uniform in velocity
    nv = spec.n_vel
    vc = spec.vel_centers
    mean_c = np.stack(
        np.broadcast_arrays(
            ex[:, None, None, None], vc[None, :, None, None],
            ey[None, None, :, None], vc[None, None, None, :],
        ),
        axis=-1,
    ).reshape(-1, 4)
    var_c = np.stack(
        np.broadcast_arrays(
            vx[:, None, None, None], np.full((1, nv, 1, 1), spec.dv**2 / 12),
            vy[None, None, :, None], np.full((1, 1, 1, nv), spec.dv**2 / 12),
        ),
        axis=-1,
    ).reshape(-1, 4)
    f = frac.reshape(-1)
    keep = f > 0
    f, mean_c, var_c = f[keep], mean_c[keep], var_c[keep]
    mean = f @ mean_c
    d = mean_c - mean
    cov = np.diag(f @ var_c) + np.einsum("k,ki,kj->ij", f, d, d)
    cov = 0.5 * (cov + cov.T)

    flat = np.ravel_multi_index(
        np.ix_(ix, np.arange(nv), iy, np.arange(nv)), spec.shape
    ).reshape(-1)[keep]
    return MeasurementTerms(mu, Gaussian(mean, cov), flat, f)


def measurement_intensity(model, pd, meas, z) -> float:
    """Intensity of measurements at ``z`` originating from undetected targets."""
    return measurement_terms(model, pd, meas, z).intensity


def birth_density_from_measurement(model, pd, meas, z, birth_prior_cov=UNIFORM_BIRTH_PRIOR_COV) -> Gaussian:
    t = measurement_terms(model, pd, meas, z, birth_prior_cov)
    if t.density is None:
        raise ValueError("no undetected-target intensity at this measurement")
    return t.density


def deposit_cells(model: GridIntensity, cells, masses) -> GridIntensity:
    """Add point masses (expected target counts) to the given flat cells."""
    masses = np.asarray(masses, dtype=float)
    if np.any(masses < 0):
        raise ValueError("deposit mass must be nonnegative")
    v = model.values.copy()
    np.add.at(v, np.asarray(cells, dtype=int), masses / model.spec.cell_volume)
    return GridIntensity(model.spec, v)


def gaussian_cell_weights(spec: GridSpec, g: Gaussian, nsigma: float = 4.0):
    """Normalized weights of ``g`` over the cells within ``nsigma`` per axis.

    Returns ``(flat_cells, weights)``; weights sum to one.
    """
    sd = np.sqrt(np.clip(np.diag(g.cov), 0.0, None))
    axes = []
    for k, (centers, width) in enumerate(
        [(spec.pos_centers, spec.dp), (spec.vel_centers, spec.dv)] * 2
    ):
        r = max(nsigma * sd[k], width / 2)
        idx = np.nonzero(np.abs(centers - g.mean[k]) <= r)[0]
        if idx.size == 0:
            idx = np.array([int(np.argmin(np.abs(centers - g.mean[k])))])
        axes.append(idx)
    cx = [spec.pos_centers, spec.vel_centers, spec.pos_centers, spec.vel_centers]
    pts = np.stack(
        np.meshgrid(*[cx[k][axes[k]] for k in range(4)], indexing="ij"), axis=-1
    ).reshape(-1, 4)
    cov = g.cov + 1e-12 * np.eye(4)
    d = pts - g.mean
    maha = np.einsum("ki,ij,kj->k", d, np.linalg.inv(cov), d)
    logw = -0.5 * maha
    w = np.exp(logw - logw.max())
    w /= w.sum()
    flat = np.ravel_multi_index(np.ix_(*axes), spec.shape).reshape(-1)
    return flat, w


def deposit(model: GridIntensity, mass: float, g: Gaussian) -> GridIntensity:
    """Add ``mass`` expected targets distributed as ``g`` onto the grid."""
    if not isinstance(model, GridIntensity):
        raise TypeError("deposit needs a grid intensity")
    if mass < 0:
        raise ValueError("deposit mass must be nonnegative")
    if mass == 0:
        return model
    cells, w = gaussian_cell_weights(model.spec, g)
    return deposit_cells(model, cells, mass * w)


def export_intensity_csv(model: GridIntensity, path) -> None:
    """Write cell centres and intensity density, one row per cell."""
    centers = model.spec.cell_centers()
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("px,vx,py,vy,intensity\n")
        for c, v in zip(centers, model.values):
            fh.write(f"{c[0]!r},{c[1]!r},{c[2]!r},{c[3]!r},{float(v)!r}\n")
