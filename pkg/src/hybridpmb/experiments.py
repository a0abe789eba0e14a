"""Scenario presets, Monte Carlo execution and CSV output."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import subprocess
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from . import intensity as inten
from .gaussian import LinearMeasModel
from .metrics import OspaParams, coverage_filtered_truth, mospa_curve, ospa
from .simulator import DEFAULT_HOTSPOTS, ScenarioConfig, detection_field, simulate
from .tracker import FilterParams, FilterState, Models, TrackSet, extract_estimates, step

log = logging.getLogger(__name__)

CSV_HEADER = ["variant", "time", "mospa_mean", "mospa_stderr", "undetected_mass", "track_count_mean"]
STEADY_DETECTED_MASS = 0.1663


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class Variant:
    name: str
    representation: str = "uniform"  # "uniform" or "grid"
    fixed_mass: float | None = None  # hold the undetected intensity at this total
    prune: str = "delete"
    threshold: float = 1e-3

    def __post_init__(self):
        if self.representation not in ("uniform", "grid"):
            raise ConfigError(f"variant {self.name}: representation must be 'uniform' or 'grid'")
        if self.prune not in ("delete", "recycle", "budget"):
            raise ConfigError(f"variant {self.name}: unknown prune mode {self.prune!r}")


@dataclass(frozen=True)
class Preset:
    name: str
    scenario: ScenarioConfig
    filter: FilterParams
    variants: tuple
    coverage_scoring: bool = False


def _fixed_variants():
    return tuple(
        Variant(f"fixed-{m:g}", "uniform", fixed_mass=m) for m in (5.0, 1.0, STEADY_DETECTED_MASS)
    )


PRESETS = {
    "fig1": Preset(
        "fig1",
        ScenarioConfig(duration=100, sensor="static"),
        FilterParams(prune="delete", deletion_threshold=1e-3),
        (Variant("dynamic", "uniform"),) + _fixed_variants(),
    ),
    "fig3": Preset(
        "fig3",
        ScenarioConfig(duration=140, sensor="path", hotspots=DEFAULT_HOTSPOTS),
        FilterParams(prune="delete", deletion_threshold=1e-3),
        (Variant("dynamic", "grid"),) + _fixed_variants(),
        coverage_scoring=True,
    ),
    "fig5": Preset(
        "fig5",
        ScenarioConfig(duration=100, sensor="static", hotspots=DEFAULT_HOTSPOTS),
        FilterParams(prune="recycle", recycle_threshold=0.1),
        (
            Variant("recycle-0.1", "grid", prune="recycle", threshold=0.1),
            Variant("delete-0.1", "grid", prune="delete", threshold=0.1),
            Variant("delete-0.001", "grid", prune="delete", threshold=1e-3),
        ),
    ),
}


def preset(name: str) -> tuple[ScenarioConfig, FilterParams]:
    if name not in PRESETS:
        raise ConfigError(f"unknown preset {name!r}; available: {', '.join(sorted(PRESETS))}")
    p = PRESETS[name]
    return p.scenario, p.filter


# -- config files ---------------------------------------------------------------


def _from_mapping(cls, data: dict, where: str, base=None):
    names = {f.name for f in dataclasses.fields(cls) if f.init}
    unknown = sorted(set(data) - names)
    if unknown:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(unknown)}")
    kwargs = {}
    for k, v in data.items():
        kwargs[k] = tuple(tuple(x) if isinstance(x, list) else x for x in v) if isinstance(v, list) else v
    if "birth_prior_cov" in kwargs:
        kwargs["birth_prior_cov"] = np.asarray(kwargs["birth_prior_cov"], dtype=float)
    try:
        return replace(base, **kwargs) if base is not None else cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"{where}: {e}") from e


def load_config(path) -> Preset:
    """Read a YAML experiment description.

    Top-level keys: ``base`` (preset name), ``scenario``, ``filter``,
    ``variants`` (list of mappings) and ``coverage_scoring``.
    """
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text) or {}
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        line = f" line {mark.line + 1}" if mark else ""
        raise ConfigError(f"{path}:{line} cannot parse: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    allowed = {"base", "scenario", "filter", "variants", "coverage_scoring"}
    unknown = sorted(set(data) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown field(s) {', '.join(unknown)}")
    base = PRESETS.get(data.get("base", "fig1"))
    if base is None:
        raise ConfigError(f"{path}: base: unknown preset {data['base']!r}")
    scenario = _from_mapping(ScenarioConfig, data.get("scenario") or {}, f"{path}: scenario", base.scenario)
    filt = _from_mapping(FilterParams, data.get("filter") or {}, f"{path}: filter", base.filter)
    variants = base.variants
    if "variants" in data:
        variants = tuple(
            _from_mapping(Variant, v, f"{path}: variants[{k}]") for k, v in enumerate(data["variants"])
        )
    return Preset(Path(path).stem, scenario, filt, variants,
                  bool(data.get("coverage_scoring", base.coverage_scoring)))


# -- filter construction ----------------------------------------------------------


def grid_spec(config: ScenarioConfig) -> inten.GridSpec:
    lo, hi = config.region
    n = int(round((hi - lo) / config.grid_pos_spacing)) + 1
    vc = np.asarray(config.grid_vel_centers, dtype=float)
    dv = vc[1] - vc[0]
    return inten.GridSpec(np.linspace(lo, hi, n), vc, config.region,
                          (vc[0] - dv / 2, vc[-1] + dv / 2))


def build_kernel(config: ScenarioConfig, cache_dir=None) -> inten.TransitionKernel:
    return inten.cached_kernel(grid_spec(config), config.dynamics, config.survival,
                               config.kernel_samples, config.kernel_seed, cache_dir)


@dataclass
class FilterSetup:
    state: FilterState
    models: Models
    params: FilterParams


def make_filter(config: ScenarioConfig, base: FilterParams, variant: Variant, kernel=None) -> FilterSetup:
    meas = LinearMeasModel(config.meas_var * np.eye(2))
    lam_fa = config.clutter_total / config.position_area
    params = replace(
        base,
        false_alarm_intensity=lam_fa,
        survival=config.survival,
        region=config.region,
        prune=variant.prune,
        dynamic_intensity=variant.fixed_mass is None,
    )
    if variant.prune == "delete":
        params = replace(params, deletion_threshold=variant.threshold)
    elif variant.prune == "recycle":
        params = replace(params, recycle_threshold=variant.threshold)
    else:
        params = replace(params, distortion_budget=variant.threshold)

    if variant.representation == "uniform":
        vol, area = config.volume, config.position_area
        if variant.fixed_mass is None:
            lam = inten.steady_state_uniform(config.birth_total, config.survival, vol, area)
        else:
            lam = inten.UniformIntensity(variant.fixed_mass / vol, vol, area)
        birth = inten.UniformIntensity(config.birth_total / vol, vol, area)
        models = Models(config.dynamics, meas, config.survival, birth)
    else:
        if kernel is None:
            kernel = build_kernel(config)
        spec = kernel.spec
        if variant.fixed_mass is None:
            lam = inten.uniform_fill(spec, config.steady_mass)
        else:
            lam = inten.uniform_fill(spec, variant.fixed_mass)
        birth, _ = inten.steady_state_birth(kernel, inten.uniform_fill(spec, config.steady_mass))
        for h in config.hotspots:
            birth = inten.GridIntensity(spec, birth.values + inten.box_birth(spec, h, config.hotspot_rate).values)
        models = Models(config.dynamics, meas, kernel, birth)
    return FilterSetup(FilterState(TrackSet(), lam), models, params)


# -- Monte Carlo ------------------------------------------------------------------


@dataclass
class RunResult:
    mospa: np.ndarray  # (variants, T + 1)
    mass: np.ndarray
    tracks: np.ndarray


def run_single(preset_obj: Preset, run_seed, kernel=None, ospa_params=OspaParams(), callback=None) -> RunResult:
    """Simulate one run and filter it with every variant."""
    config = preset_obj.scenario
    truth, scans, sensors = simulate(config, run_seed)
    T = config.duration
    nv = len(preset_obj.variants)
    out = RunResult(np.zeros((nv, T + 1)), np.zeros((nv, T + 1)), np.zeros((nv, T + 1)))
    for v, variant in enumerate(preset_obj.variants):
        setup = make_filter(config, preset_obj.filter, variant, kernel)
        state = setup.state
        for t in range(T + 1):
            if t > 0:
                pd = detection_field(sensors[t], config)
                state = step(state, scans[t - 1], setup.models, setup.params, pd)
            est = extract_estimates(state, setup.params)
            tru = truth.states[t]
            if preset_obj.coverage_scoring:
                pd_t = detection_field(sensors[t], config)
                tru = coverage_filtered_truth(tru, pd_t)
                est = coverage_filtered_truth(est, pd_t)
            out.mospa[v, t] = ospa(est, tru, ospa_params)
            out.mass[v, t] = predicted_mass(state)
            out.tracks[v, t] = len(state.tracks)
            if callback is not None:
                callback(variant, t, state)
    return out


def predicted_mass(state: FilterState) -> float:
    """Expected number of undetected targets just before the latest scan."""
    if state.predicted_mass is not None:
        return state.predicted_mass
    return inten.total_mass(state.intensity)


@dataclass
class ExperimentSpec:
    preset: str = "fig1"
    variants: tuple | None = None  # names; None runs all
    runs: int = 100
    seed: int = 0
    out: str | None = None
    workers: int | None = 1
    config_path: str | None = None
    cache_dir: str | None = None

    def __post_init__(self):
        if self.runs < 1:
            raise ConfigError("runs must be at least 1")


@dataclass
class ResultTable:
    preset: str
    variants: tuple
    times: np.ndarray
    mospa: np.ndarray  # (runs, variants, T + 1)
    mass: np.ndarray
    tracks: np.ndarray
    files: list = field(default_factory=list)

    def index(self, variant: str) -> int:
        return list(self.variants).index(variant)

    def summary(self, variant: str) -> dict:
        v = self.index(variant)
        m, se = mospa_curve(self.mospa[:, v, :])
        return {
            "mospa_mean": m,
            "mospa_stderr": se,
            "undetected_mass": self.mass[:, v, :].mean(axis=0),
            "track_count_mean": self.tracks[:, v, :].mean(axis=0),
        }


def resolve_preset(spec: ExperimentSpec) -> Preset:
    p = load_config(spec.config_path) if spec.config_path else PRESETS.get(spec.preset)
    if p is None:
        raise ConfigError(f"unknown preset {spec.preset!r}; available: {', '.join(sorted(PRESETS))}")
    if spec.variants:
        names = {v.name for v in p.variants}
        missing = [n for n in spec.variants if n not in names]
        if missing:
            raise ConfigError(f"unknown variant(s) {missing}; available: {sorted(names)}")
        p = replace(p, variants=tuple(v for v in p.variants if v.name in spec.variants))
    return p


def _run_job(args):
    preset_obj, seed, run, kernel = args
    return run_single(preset_obj, np.random.SeedSequence(seed, spawn_key=(run,)), kernel)


def run_experiment(spec: ExperimentSpec) -> ResultTable:
    p = resolve_preset(spec)
    kernel = None
    if any(v.representation == "grid" for v in p.variants):
        kernel = build_kernel(p.scenario, spec.cache_dir)
    jobs = [(p, spec.seed, r, kernel) for r in range(spec.runs)]
    workers = spec.workers or os.cpu_count() or 1
    if workers > 1 and spec.runs > 1:
        with ProcessPoolExecutor(min(workers, spec.runs)) as ex:
            results = list(ex.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    T = p.scenario.duration
    table = ResultTable(
        p.name,
        tuple(v.name for v in p.variants),
        np.arange(T + 1),
        np.stack([r.mospa for r in results]),
        np.stack([r.mass for r in results]),
        np.stack([r.tracks for r in results]),
    )
    if spec.out:
        table.files = write_outputs(table, p, spec)
    return table


# -- output -----------------------------------------------------------------------


def _fmt(x) -> str:
    return repr(float(x))


def write_outputs(table: ResultTable, p: Preset, spec: ExperimentSpec) -> list:
    out = Path(spec.out)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for name in table.variants:
        s = table.summary(name)
        path = out / f"{table.preset}_{name}.csv"
        lines = [",".join(CSV_HEADER)]
        for t in table.times:
            lines.append(",".join([
                name, str(int(t)), _fmt(s["mospa_mean"][t]), _fmt(s["mospa_stderr"][t]),
                _fmt(s["undetected_mass"][t]), _fmt(s["track_count_mean"][t]),
            ]))
        path.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
        files.append(path)
    manifest = {
        "preset": table.preset,
        "variants": [dataclasses.asdict(v) for v in p.variants],
        "runs": spec.runs,
        "seed": spec.seed,
        "scenario": dataclasses.asdict(p.scenario),
        "filter": {k: v for k, v in dataclasses.asdict(p.filter).items() if k != "birth_prior_cov"}
        | {"birth_prior_cov": np.asarray(p.filter.birth_prior_cov).tolist()},
        "coverage_scoring": p.coverage_scoring,
        "version": version_string(),
        "numpy": np.__version__,
    }
    manifest["config_hash"] = hashlib.sha256(
        json.dumps({k: manifest[k] for k in ("variants", "scenario", "filter", "coverage_scoring")},
                   sort_keys=True).encode()
    ).hexdigest()
    path = out / f"{table.preset}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    files.append(path)
    return files


def version_string() -> str:
    try:
        rev = subprocess.run(
            ["git", "describe", "--always", "--dirty"], capture_output=True, text=True,
            cwd=Path(__file__).parent, timeout=5,
        ).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"{__version__}+{rev}" if rev else __version__


def read_results_csv(path) -> dict:
    import csv

    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in CSV_HEADER[1:]}


def export_intensity_heatmap(state: FilterState, path) -> np.ndarray:
    """Write the position marginal (targets per unit area) of a grid intensity."""
    lam = state.intensity
    if not isinstance(lam, inten.GridIntensity):
        raise TypeError("heatmap export needs a grid intensity")
    spec = lam.spec
    op, _ = spec.axis_overlap()
    # boundary cells only partly cover the region; divide by the covered area
    dens = lam.position_marginal() / (spec.dp**2 * np.outer(op, op))
    with open(path, "w", newline="\n", encoding="utf-8") as fh:
        fh.write("px,py,intensity\n")
        for i, px in enumerate(spec.pos_centers):
            for j, py in enumerate(spec.pos_centers):
                fh.write(f"{float(px)!r},{float(py)!r},{float(dens[i, j])!r}\n")
    return dens
