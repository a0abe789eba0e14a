"""Ground truth and measurement simulation.

Targets live in ``[-100, 100]^2`` with velocities starting in ``[-1, 1]^2``
and follow the nearly-constant-velocity model. They are born as a Poisson
process uniformly inside the region (plus optional hotspot cells), enter
through the region edges at the rate that balances departures, survive each
step with a fixed probability and are removed once they leave the region.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .gaussian import CvDynamics
from .intensity import ConeDetection, ConstantDetection, DetectionField

DEFAULT_PATH = ((-20.0, -20.0), (-20.0, -55.0), (15.0, -55.0), (15.0, -20.0), (-20.0, -20.0))
DEFAULT_HOTSPOTS = ((-60.0, 60.0), (60.0, 40.0))


@dataclass(frozen=True)
class ScenarioConfig:
    region: tuple[float, float] = (-100.0, 100.0)
    velocity_region: tuple[float, float] = (-1.0, 1.0)
    birth_total: float = 0.05
    hotspots: tuple = ()
    hotspot_rate: float = 0.01  # per hotspot cell, per step
    boundary_entry: bool = True
    survival: float = 0.999
    pd: float = 0.3
    clutter_total: float = 10.0
    diffusion: float = 0.01
    meas_var: float = 1.0
    duration: int = 100
    sensor: str = "static"  # "static" (omnidirectional) or "path"
    waypoints: tuple = DEFAULT_PATH
    sensor_speed: float = 1.0
    fov_half_angle_deg: float = 45.0
    grid_pos_spacing: float = 4.0
    grid_vel_centers: tuple = (-1.0, -0.6, -0.2, 0.2, 0.6, 1.0)
    kernel_samples: int = 1000
    kernel_seed: int = 0

    def __post_init__(self):
        for name in ("birth_total", "hotspot_rate", "clutter_total", "diffusion", "sensor_speed"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        for name in ("survival", "pd"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.sensor not in ("static", "path"):
            raise ValueError("sensor must be 'static' or 'path'")
        if self.meas_var <= 0:
            raise ValueError("meas_var must be positive")
        if self.duration < 1:
            raise ValueError("duration must be at least 1")
        object.__setattr__(self, "hotspots", tuple(tuple(map(float, h)) for h in self.hotspots))
        object.__setattr__(self, "waypoints", tuple(tuple(map(float, w)) for w in self.waypoints))

    @property
    def position_area(self) -> float:
        a, b = self.region
        return (b - a) ** 2

    @property
    def volume(self) -> float:
        c, d = self.velocity_region
        return self.position_area * (d - c) ** 2

    @property
    def steady_mass(self) -> float:
        """Expected target count with no sensor, ``birth / (1 - Ps)``."""
        return self.birth_total / (1.0 - self.survival) if self.survival < 1 else 0.0

    @property
    def dynamics(self) -> CvDynamics:
        return CvDynamics(self.diffusion)


@dataclass(frozen=True)
class SensorState:
    position: tuple[float, float]
    heading: tuple[float, float] | None  # None for an omnidirectional sensor


@dataclass(frozen=True)
class SensorPath:
    """Constant-speed motion along a polyline of waypoints."""

    waypoints: tuple
    speed: float = 1.0

    def __post_init__(self):
        w = np.asarray(self.waypoints, dtype=float)
        if w.ndim != 2 or w.shape[0] < 2 or self.speed <= 0:
            raise ValueError("a path needs two or more waypoints and positive speed")
        seg = np.diff(w, axis=0)
        length = np.hypot(seg[:, 0], seg[:, 1])
        object.__setattr__(self, "_w", w)
        object.__setattr__(self, "_seg", seg)
        object.__setattr__(self, "_cum", np.concatenate([[0.0], np.cumsum(length)]))

    def state(self, t: float) -> SensorState:
        s = t * self.speed
        cum, seg = self._cum, self._seg
        moving = np.nonzero(np.diff(cum) > 0)[0]
        if moving.size == 0:
            raise ValueError("path has no moving segment")
        if s >= cum[-1]:
            k = moving[-1]
            pos = self._w[-1]
        else:
            k = int(np.searchsorted(cum, s, side="right") - 1)
            frac = (s - cum[k]) / (cum[k + 1] - cum[k]) if cum[k + 1] > cum[k] else 0.0
            pos = self._w[k] + frac * seg[k]
            # stationary segments keep the last heading
            prior = moving[moving <= k]
            k = prior[-1] if prior.size else moving[0]
        h = seg[k] / np.hypot(*seg[k])
        return SensorState((float(pos[0]), float(pos[1])), (float(h[0]), float(h[1])))

    def manoeuvre_times(self) -> list[float]:
        """Times at which the heading changes."""
        return [float(c / self.speed) for c in self._cum[1:-1]]


def sensor_states(config: ScenarioConfig) -> list[SensorState]:
    """Sensor state for each time ``0..duration``."""
    if config.sensor == "static":
        return [SensorState((0.0, 0.0), None)] * (config.duration + 1)
    path = SensorPath(config.waypoints, config.sensor_speed)
    return [path.state(t) for t in range(config.duration + 1)]


def detection_field(sensor: SensorState, config: ScenarioConfig) -> DetectionField:
    if sensor.heading is None:
        return ConstantDetection(config.pd)
    return ConeDetection(sensor.position, sensor.heading, config.pd,
                         math.radians(config.fov_half_angle_deg))


def sensor_fov(sensor: SensorState, position, config: ScenarioConfig | None = None) -> float:
    """Detection probability for a target at ``position``."""
    config = config or ScenarioConfig(sensor="path")
    return detection_field(sensor, config).at(*position)


@dataclass
class TruthRecord:
    """Per time step ``0..T``: target ids ``(k,)`` and states ``(k, 4)``."""

    ids: list = field(default_factory=list)
    states: list = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.states)


def _uniform_targets(rng, n, xlim, ylim, vlim):
    out = np.empty((n, 4))
    out[:, 0] = rng.uniform(*xlim, n)
    out[:, 2] = rng.uniform(*ylim, n)
    out[:, 1] = rng.uniform(*vlim, n)
    out[:, 3] = rng.uniform(*vlim, n)
    return out


def _entering_targets(rng, config: ScenarioConfig) -> np.ndarray:
    """Targets crossing into the region during one step.

    The rate per edge is the outward flux of a uniform population at its
    steady-state density: ``density * edge_length * E[max(v, 0)]``.
    """
    lo, hi = config.region
    vlo, vhi = config.velocity_region
    vmax = vhi  # symmetric velocity region
    density = config.steady_mass / config.position_area
    rate = density * (hi - lo) * vmax / 4.0
    rows = []
    for axis, sign in ((0, 1), (0, -1), (2, 1), (2, -1)):
        k = rng.poisson(rate)
        if k == 0:
            continue
        x = _uniform_targets(rng, k, (lo, hi), (lo, hi), (vlo, vhi))
        vn = vmax * np.sqrt(rng.random(k))  # flux-weighted inward speed
        depth = vn * rng.random(k)
        edge = lo if sign > 0 else hi
        x[:, axis] = edge + sign * depth
        x[:, axis + 1] = sign * vn
        rows.append(x)
    return np.concatenate(rows) if rows else np.zeros((0, 4))


def _reflect(v, lo, hi):
    """Fold values back into ``[lo, hi]`` by mirror reflection at the bounds."""
    w = hi - lo
    y = np.mod(v - lo, 2 * w)
    return lo + (w - np.abs(y - w))


def simulate_truth(config: ScenarioConfig, seed, initial_mass: float | None = None) -> TruthRecord:
    rng = np.random.default_rng(seed)
    lo, hi = config.region
    vr = config.velocity_region
    dyn = config.dynamics
    chol = np.linalg.cholesky(dyn.Q + 1e-300 * np.eye(4)) if config.diffusion > 0 else np.zeros((4, 4))
    mass = config.steady_mass if initial_mass is None else initial_mass

    n0 = rng.poisson(mass)
    x = _uniform_targets(rng, n0, (lo, hi), (lo, hi), vr)
    ids = np.arange(n0)
    next_id = n0
    rec = TruthRecord([ids], [x])
    for _ in range(config.duration):
        alive = rng.random(len(x)) < config.survival
        x, ids = x[alive], ids[alive]
        x = x @ dyn.F.T + rng.standard_normal(x.shape) @ chol.T
        # velocities stay in the state space; reflection keeps the uniform
        # velocity law stationary, which the boundary entry flux relies on
        x[:, [1, 3]] = _reflect(x[:, [1, 3]], *vr)
        inside = (x[:, 0] >= lo) & (x[:, 0] <= hi) & (x[:, 2] >= lo) & (x[:, 2] <= hi)
        x, ids = x[inside], ids[inside]

        new = [_uniform_targets(rng, rng.poisson(config.birth_total), (lo, hi), (lo, hi), vr)]
        for cx, cy in config.hotspots:
            h = config.grid_pos_spacing / 2
            new.append(_uniform_targets(rng, rng.poisson(config.hotspot_rate),
                                        (cx - h, cx + h), (cy - h, cy + h), vr))
        if config.boundary_entry:
            new.append(_entering_targets(rng, config))
        new = np.concatenate(new)
        x = np.concatenate([x, new])
        ids = np.concatenate([ids, np.arange(next_id, next_id + len(new))])
        next_id += len(new)
        rec.ids.append(ids)
        rec.states.append(x)
    return rec


def generate_scan(truth_t, pd: DetectionField, config: ScenarioConfig, seed) -> np.ndarray:
    """Unlabelled, shuffled measurements ``(m, 2)`` for one time step."""
    rng = np.random.default_rng(seed)
    x = np.asarray(truth_t, dtype=float).reshape(-1, 4)
    det = rng.random(len(x)) < pd(x[:, [0, 2]]) if len(x) else np.zeros(0, bool)
    z = x[det][:, [0, 2]] + math.sqrt(config.meas_var) * rng.standard_normal((int(det.sum()), 2))
    lo, hi = config.region
    nc = rng.poisson(config.clutter_total)
    clutter = rng.uniform(lo, hi, (nc, 2))
    out = np.concatenate([z, clutter])
    return out[rng.permutation(len(out))]


def simulate(config: ScenarioConfig, seed):
    """Truth and scans for one run; scans[t - 1] is the scan at time ``t``."""
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    truth_ss, scan_ss = ss.spawn(2)
    truth = simulate_truth(config, truth_ss)
    sensors = sensor_states(config)
    scan_seeds = scan_ss.spawn(config.duration)
    scans = [
        generate_scan(truth.states[t], detection_field(sensors[t], config), config, scan_seeds[t - 1])
        for t in range(1, config.duration + 1)
    ]
    return truth, scans, sensors


# -- CSV fixtures ---------------------------------------------------------------


def write_truth_csv(truth: TruthRecord, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "target_id", "px", "vx", "py", "vy"])
        for t, (ids, xs) in enumerate(zip(truth.ids, truth.states)):
            for i, x in zip(ids, xs):
                w.writerow([t, int(i), *map(repr, map(float, x))])


def read_truth_csv(path) -> TruthRecord:
    rows: dict = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            rows.setdefault(int(r["time"]), []).append(
                (int(r["target_id"]), [float(r[k]) for k in ("px", "vx", "py", "vy")])
            )
    T = max(rows) if rows else -1
    rec = TruthRecord()
    for t in range(T + 1):
        items = rows.get(t, [])
        rec.ids.append(np.array([i for i, _ in items], dtype=np.int64))
        rec.states.append(np.array([x for _, x in items], dtype=float).reshape(-1, 4))
    return rec


def write_scans_csv(scans, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["time", "zx", "zy"])
        for t, Z in enumerate(scans, start=1):
            for z in Z:
                w.writerow([t, repr(float(z[0])), repr(float(z[1]))])


def read_scans_csv(path, duration: int) -> list[np.ndarray]:
    out = [[] for _ in range(duration)]
    with open(path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            out[int(r["time"]) - 1].append([float(r["zx"]), float(r["zy"])])
    return [np.array(z, dtype=float).reshape(-1, 2) for z in out]
