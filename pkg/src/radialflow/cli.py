"""Config-driven experiment runner.

Experiments are INI files::

    [experiment]
    scenario = subcritical_radial

    [model]
    d = 3
    mass_ratio = 0.5

    [grid]
    n_cells = 256

Every key has a scenario default, so a config only lists what it changes.
``auto`` selects a value derived from the model (for instance the grid
radius from the steady-state support).  Outputs go to
``$RADIALFLOW_OUTPUT/<config stem>`` unless ``[experiment] output`` or
``--output`` says otherwise.
"""
from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .barriers import aggregation_families, aggregation_rate_constant, barrier_profile, bracketing_radii, check_ordering
from .diagnostics import (
    RateFit,
    dissipation_defect,
    entropy,
    fit_rate,
    free_energy,
    rescaled_energy,
    wasserstein,
)
from .evolution import (
    BLOWUP,
    MAX_STEPS,
    OK,
    OVERFLOW,
    EvolutionError,
    EvolutionState,
    StepControl,
    discrete_equilibrium,
    evolve,
    mass_form_residual,
    rescale_to_similarity,
    settled_critical_mass,
    step,
)
from .model import PRESETS, ModelSpec, preset
from .radial import RadialGrid, RadialProfile, read_profile_csv, rebin, rescale_profile, second_moment
from .stationary import (
    StationaryResult,
    critical_mass,
    fokker_planck_profile,
    solve_mu_A,
    solve_u1,
    solve_us,
    steady_radius_estimate,
)

OUTPUT_ENV = "RADIALFLOW_OUTPUT"
ERROR = 4
CONFIG_ERROR = 5
STATUS_CODES = {"ok": OK, "step_budget": MAX_STEPS, "overflow": OVERFLOW, "blowup_suspected": BLOWUP, "error": ERROR}
SERIES_COLUMNS = (
    "t", "mass", "m2", "energy", "rescaled_energy", "sup_density", "w2_to_target", "dissipation_defect",
)
INITIAL_KINDS = ("uniform_ball", "barenblatt_like", "annulus", "scaled_stationary", "from_csv")
SWEEP_AXES = ("mass", "q", "R0", "n_cells")

SCENARIOS: dict[str, dict[str, dict[str, str]]] = {
    "critical_radial": {
        "model": {"preset": "pks_original", "mass_ratio": "1", "calibrate_mass": "true"},
        "initial": {"kind": "barenblatt_like", "radius": "3"},
        "grid": {"r_max": "8", "n_cells": "256"},
        "run": {"horizon": "50", "snapshots": "51"},
        "diagnostics": {"target": "none", "fit": "none"},
    },
    "subcritical_radial": {
        "model": {"preset": "pks_rescaled", "mass_ratio": "0.5"},
        "initial": {"kind": "barenblatt_like", "radius": "3"},
        "grid": {"r_max": "6", "n_cells": "256"},
        "run": {"horizon": "6", "snapshots": "61"},
        "diagnostics": {"target": "auto", "fit": "exp", "fit_window": "1, 6"},
    },
    "original_variables_rate": {
        "model": {"preset": "pks_rescaled", "mass_ratio": "0.5"},
        "initial": {"kind": "barenblatt_like", "radius": "3"},
        "grid": {"r_max": "6", "n_cells": "256"},
        "run": {"horizon": "6", "snapshots": "61"},
        "diagnostics": {"target": "auto", "fit": "alg", "fit_window": "auto"},
    },
    "supercritical_blowup": {
        "model": {"preset": "pks_original", "mass_ratio": "1.2"},
        "initial": {"kind": "scaled_stationary", "R0": "0.2"},
        "grid": {"r_max": "6", "n_cells": "256"},
        "run": {"horizon": "1", "snapshots": "101"},
        "diagnostics": {"target": "none", "fit": "none"},
    },
    "aggregation_steady": {
        "model": {"preset": "aggregation", "q": "2", "mass": "1"},
        "initial": {"kind": "barenblatt_like", "radius": "auto"},
        "grid": {"r_max": "auto", "n_cells": "256"},
        "run": {"horizon": "auto", "snapshots": "101"},
        "diagnostics": {"target": "auto", "fit": "exp", "fit_window": "auto"},
    },
    "mass_scaling": {
        "model": {"preset": "pks_rescaled", "mass_ratio": "0.01"},
        "initial": {"kind": "barenblatt_like", "radius": "auto"},
        "grid": {"r_max": "auto", "n_cells": "128"},
        "run": {"horizon": "2", "snapshots": "21"},
        "diagnostics": {"target": "none", "fit": "none"},
    },
    "comparison_sandwich": {
        "model": {"preset": "aggregation", "q": "1.5", "mass": "1"},
        "initial": {"kind": "barenblatt_like", "radius": "auto"},
        "grid": {"r_max": "auto", "n_cells": "256"},
        "run": {"horizon": "auto", "snapshots": "51"},
        "diagnostics": {"target": "auto", "fit": "exp", "fit_window": "auto"},
    },
}

_BASE = {
    "experiment": {"scenario": "", "name": "", "output": ""},
    "model": {
        "preset": "", "d": "3", "q": "", "a": "", "mass": "", "mass_ratio": "", "calibrate_mass": "false",
    },
    "initial": {"kind": "", "radius": "auto", "r1": "", "r2": "", "R0": "", "path": ""},
    "grid": {"r_max": "auto", "n_cells": "256"},
    "control": {
        "safety": "0.9", "reconstruction": "minmod", "blowup_ratio": "1000", "max_steps": "50000000",
    },
    "run": {"horizon": "1", "snapshots": "11", "save_every": "1"},
    "diagnostics": {"target": "auto", "fit": "none", "fit_window": "auto"},
}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


@dataclass(frozen=True)
class ExperimentConfig:
    scenario: str
    name: str
    output: str
    preset: str
    d: int
    q: float | None
    a: float | None
    mass: float | None
    mass_ratio: float | None
    calibrate_mass: bool
    initial: str
    radius: float | None
    r1: float | None
    r2: float | None
    R0: float | None
    path: str
    r_max: float | None
    n_cells: int
    safety: float
    reconstruction: str
    blowup_ratio: float
    max_steps: int
    horizon: float | None
    snapshots: int
    save_every: int
    target: str
    fit: str
    fit_window: tuple[float, float] | None

    @property
    def control(self) -> StepControl:
        return StepControl(
            safety=self.safety, reconstruction=self.reconstruction,
            blowup_ratio=self.blowup_ratio, max_steps=self.max_steps,
        )


def _field(sections, section, key):
    return sections[section][key].strip()


def _number(sections, section, key, kind=float, allow_auto=False, optional=False):
    raw = _field(sections, section, key)
    if raw == "" and optional:
        return None
    if raw == "auto" and allow_auto:
        return None
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section}] {key}: expected a number, got {raw!r}") from None


def _flag(sections, section, key) -> bool:
    raw = _field(sections, section, key).lower()
    if raw in ("true", "yes", "1", "on"):
        return True
    if raw in ("false", "no", "0", "off", ""):
        return False
    raise ConfigError(f"[{section}] {key}: expected true or false, got {raw!r}")


def merge_sections(raw: dict[str, dict[str, str]]) -> dict[str, dict[str, str]]:
    """Layer ``raw`` over the scenario defaults and the global defaults."""
    for section, keys in raw.items():
        if section not in _BASE:
            raise ConfigError(f"unknown section [{section}]")
        for key in keys:
            if key not in _BASE[section]:
                raise ConfigError(f"[{section}] {key}: unknown key")
    scenario = raw.get("experiment", {}).get("scenario", "").strip()
    if scenario not in SCENARIOS:
        raise ConfigError(f"[experiment] scenario: expected one of {', '.join(SCENARIOS)}, got {scenario!r}")
    merged = {s: dict(v) for s, v in _BASE.items()}
    for source in (SCENARIOS[scenario], raw):
        for section, keys in source.items():
            merged[section].update({k: str(v) for k, v in keys.items()})
    # an explicit mass or mass_ratio replaces the scenario's choice of the other
    model = raw.get("model", {})
    for key, other in (("mass", "mass_ratio"), ("mass_ratio", "mass")):
        if model.get(key, "").strip() and other not in model:
            merged["model"][other] = ""
    return merged


def parse_config(raw: dict[str, dict[str, str]], name: str = "experiment") -> ExperimentConfig:
    s = merge_sections(raw)
    preset_name = _field(s, "model", "preset")
    if preset_name not in PRESETS:
        raise ConfigError(f"[model] preset: expected one of {', '.join(PRESETS)}, got {preset_name!r}")
    kind = _field(s, "initial", "kind")
    if kind not in INITIAL_KINDS:
        raise ConfigError(f"[initial] kind: expected one of {', '.join(INITIAL_KINDS)}, got {kind!r}")
    window_raw = _field(s, "diagnostics", "fit_window")
    if window_raw in ("", "auto"):
        window = None
    else:
        try:
            lo, hi = (float(x) for x in window_raw.split(","))
        except ValueError:
            raise ConfigError(f"[diagnostics] fit_window: expected 'lo, hi', got {window_raw!r}") from None
        if not hi > lo:
            raise ConfigError("[diagnostics] fit_window: upper end must exceed the lower end")
        window = (lo, hi)
    cfg = ExperimentConfig(
        scenario=_field(s, "experiment", "scenario"),
        name=_field(s, "experiment", "name") or name,
        output=_field(s, "experiment", "output"),
        preset=preset_name,
        d=_number(s, "model", "d", int),
        q=_number(s, "model", "q", optional=True),
        a=_number(s, "model", "a", optional=True),
        mass=_number(s, "model", "mass", optional=True),
        mass_ratio=_number(s, "model", "mass_ratio", optional=True),
        calibrate_mass=_flag(s, "model", "calibrate_mass"),
        initial=kind,
        radius=_number(s, "initial", "radius", allow_auto=True, optional=True),
        r1=_number(s, "initial", "r1", optional=True),
        r2=_number(s, "initial", "r2", optional=True),
        R0=_number(s, "initial", "R0", optional=True),
        path=_field(s, "initial", "path"),
        r_max=_number(s, "grid", "r_max", allow_auto=True),
        n_cells=_number(s, "grid", "n_cells", int),
        safety=_number(s, "control", "safety"),
        reconstruction=_field(s, "control", "reconstruction"),
        blowup_ratio=_number(s, "control", "blowup_ratio"),
        max_steps=_number(s, "control", "max_steps", int),
        horizon=_number(s, "run", "horizon", allow_auto=True),
        snapshots=_number(s, "run", "snapshots", int),
        save_every=_number(s, "run", "save_every", int),
        target=_field(s, "diagnostics", "target"),
        fit=_field(s, "diagnostics", "fit"),
        fit_window=window,
    )
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    if cfg.d < 3:
        raise ConfigError(f"[model] d: dimension must be >= 3, got {cfg.d}")
    if (cfg.mass is None) == (cfg.mass_ratio is None):
        raise ConfigError("[model] mass, mass_ratio: give exactly one")
    if (cfg.mass if cfg.mass is not None else cfg.mass_ratio) <= 0:
        raise ConfigError("[model] mass: must be positive")
    if cfg.preset == "aggregation" and cfg.q is None:
        raise ConfigError("[model] q: the aggregation preset needs q")
    if cfg.preset == "aggregation" and not (2 - cfg.d < cfg.q <= 2):
        raise ConfigError(f"[model] q: must lie in ({2 - cfg.d}, 2], got {cfg.q}")
    if cfg.preset == "fokker_planck" and (cfg.a is None or cfg.a <= 0):
        raise ConfigError("[model] a: the fokker_planck preset needs a > 0")
    if cfg.n_cells < 8:
        raise ConfigError(f"[grid] n_cells: need at least 8 cells, got {cfg.n_cells}")
    if cfg.r_max is not None and cfg.r_max <= 0:
        raise ConfigError("[grid] r_max: must be positive")
    if cfg.horizon is not None and cfg.horizon < 0:
        raise ConfigError("[run] horizon: must be nonnegative")
    if cfg.snapshots < 1:
        raise ConfigError("[run] snapshots: need at least 1")
    if cfg.save_every < 1:
        raise ConfigError("[run] save_every: must be >= 1")
    if cfg.target not in ("auto", "none"):
        raise ConfigError(f"[diagnostics] target: expected auto or none, got {cfg.target!r}")
    if cfg.fit not in ("exp", "alg", "none"):
        raise ConfigError(f"[diagnostics] fit: expected exp, alg or none, got {cfg.fit!r}")
    try:
        cfg.control
    except ValueError as exc:
        raise ConfigError(f"[control] {exc}") from None
    if cfg.initial == "annulus" and not (cfg.r1 is not None and cfg.r2 is not None and 0 <= cfg.r1 < cfg.r2):
        raise ConfigError("[initial] r1, r2: annulus needs 0 <= r1 < r2")
    if cfg.initial == "scaled_stationary" and not (cfg.R0 is not None and cfg.R0 > 0):
        raise ConfigError("[initial] R0: scaled_stationary needs R0 > 0")
    if cfg.initial == "from_csv" and not cfg.path:
        raise ConfigError("[initial] path: from_csv needs a path")
    if cfg.initial in ("uniform_ball", "barenblatt_like") and cfg.radius is not None and cfg.radius <= 0:
        raise ConfigError("[initial] radius: must be positive")
    pks = cfg.preset in ("pks_original", "pks_rescaled")
    if cfg.scenario in ("subcritical_radial", "original_variables_rate", "mass_scaling", "critical_radial",
                        "supercritical_blowup") and not pks:
        raise ConfigError(f"[model] preset: scenario {cfg.scenario} needs a PKS preset")
    if cfg.scenario in ("subcritical_radial", "original_variables_rate", "mass_scaling") and cfg.preset != "pks_rescaled":
        raise ConfigError(f"[model] preset: scenario {cfg.scenario} runs in similarity variables (pks_rescaled)")
    if cfg.scenario in ("aggregation_steady", "comparison_sandwich") and cfg.preset != "aggregation":
        raise ConfigError(f"[model] preset: scenario {cfg.scenario} needs the aggregation preset")
    if cfg.mass is None and not pks:
        raise ConfigError("[model] mass_ratio: only PKS presets have a critical mass; give mass")


def load_config(path: str | Path) -> ExperimentConfig:
    return parse_config(read_sections(path), Path(path).stem)


def read_sections(path: str | Path) -> dict[str, dict[str, str]]:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_file(fh)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return {s: dict(parser[s]) for s in parser.sections()}


# ---------------------------------------------------------------- set-up


@dataclass(eq=False)
class Setup:
    spec: ModelSpec
    grid: RadialGrid
    mass: float
    initial: RadialProfile
    horizon: float
    target: RadialProfile | None
    info: dict
    families: tuple | None = None


def _mass(cfg: ExperimentConfig) -> float:
    if cfg.mass is not None:
        return cfg.mass
    return cfg.mass_ratio * critical_mass(cfg.d)


def _base_stationary(cfg: ExperimentConfig, spec: ModelSpec, mass: float) -> StationaryResult:
    if cfg.preset in ("pks_original", "pks_rescaled"):
        return solve_u1(cfg.d)
    if cfg.preset == "aggregation":
        return solve_us(cfg.d, cfg.q, mass)
    if cfg.preset == "fokker_planck":
        return fokker_planck_profile(cfg.d, cfg.a, mass)
    raise ConfigError("[initial] kind: scaled_stationary has no stationary profile for porous_medium")


def _shape(cfg: ExperimentConfig, grid: RadialGrid, radius: float, spec: ModelSpec, mass: float) -> RadialProfile:
    kind = cfg.initial
    if kind == "uniform_ball":
        prof = RadialProfile.from_function(grid, lambda r: (r < radius).astype(float))
    elif kind == "barenblatt_like":
        prof = RadialProfile.from_function(grid, lambda r: np.maximum(1.0 - (r / radius) ** 2, 0.0))
    elif kind == "annulus":
        prof = RadialProfile.from_function(grid, lambda r: ((r >= cfg.r1) & (r < cfg.r2)).astype(float))
    elif kind == "scaled_stationary":
        prof = rescale_profile(_base_stationary(cfg, spec, mass).profile, cfg.R0, grid)
    else:
        try:
            prof = rebin(read_profile_csv(cfg.path, cfg.d), grid)
        except (OSError, ValueError) as exc:
            raise ConfigError(f"[initial] path: {exc}") from None
    if not prof.mass > 0:
        raise ConfigError("[initial] initial data has no mass on this grid")
    return prof.scaled_mass(mass)


def build_setup(cfg: ExperimentConfig) -> Setup:
    """Resolve ``auto`` fields and build the model, grid, data and target."""
    spec = preset(cfg.preset, cfg.d, q=cfg.q, a=cfg.a)
    if cfg.scenario in ("critical_radial", "supercritical_blowup"):
        spec = preset("pks_original", cfg.d)
    mass = _mass(cfg)
    mc = critical_mass(cfg.d) if cfg.preset in ("pks_original", "pks_rescaled") else None
    if cfg.scenario in ("subcritical_radial", "original_variables_rate") and not mass < mc:
        raise ConfigError(f"[model] mass: scenario {cfg.scenario} needs A < M_c = {mc!r}, got {mass!r}")
    if cfg.scenario == "mass_scaling" and not mass < 0.5 * mc:
        raise ConfigError(f"[model] mass: mass_scaling needs A < M_c/2 = {0.5 * mc!r}")
    if cfg.scenario == "supercritical_blowup" and not mass > mc:
        raise ConfigError(f"[model] mass: supercritical_blowup needs A > M_c = {mc!r}")
    info: dict = {"mass": mass}
    if mc is not None:
        info["critical_mass"] = mc
    us = None
    if cfg.preset == "aggregation":
        support = steady_radius_estimate(cfg.d, cfg.q)
        default_radius, default_rmax = 1.5 * support, 2.0 * support
    elif cfg.scenario == "mass_scaling":
        default_radius = fokker_planck_profile(cfg.d, 1.0 / cfg.d, mass).support_radius
        default_rmax = 2.5 * default_radius
    else:
        default_radius, default_rmax = 3.0, 8.0
    radius = cfg.radius if cfg.radius is not None else default_radius
    r_max = cfg.r_max if cfg.r_max is not None else default_rmax
    grid = RadialGrid(cfg.d, r_max, cfg.n_cells)
    info.update({"r_max": r_max, "n_cells": cfg.n_cells, "dr": grid.dr})
    if cfg.initial in ("uniform_ball", "barenblatt_like"):
        info["initial_radius"] = radius

    target = None
    horizon = cfg.horizon
    if cfg.preset == "aggregation":
        try:
            us = solve_us(cfg.d, cfg.q, mass, grid)
        except ValueError as exc:
            raise ConfigError(f"[grid] r_max: {exc}") from None
        c1 = aggregation_rate_constant(us)
        info.update({"steady_radius": us.support_radius, "rate_constant": c1})
        if horizon is None:
            horizon = 20.0 / (3.0 * c1)
        if cfg.target == "auto":
            target = us.profile
    elif cfg.target == "auto" and cfg.scenario in ("subcritical_radial", "original_variables_rate"):
        try:
            target = discrete_equilibrium(preset("pks_rescaled", cfg.d), grid, mass=mass)
        except ValueError as exc:
            raise ConfigError(f"[grid] r_max: {exc}") from None
    if horizon is None:
        horizon = 1.0

    initial = _shape(cfg, grid, radius, spec, mass)
    if cfg.calibrate_mass and cfg.scenario == "critical_radial":
        mass = settled_critical_mass(initial, spec, ctrl=cfg.control)
        initial = initial.scaled_mass(mass)
        info["calibrated_mass"] = mass
        info["calibrated_ratio"] = mass / mc
    families = None
    if cfg.scenario == "comparison_sandwich":
        r_in, r_out = bracketing_radii(us.profile, initial)
        families = aggregation_families(us, cfg.q, max(r_out, 1.0), min(r_in, 1.0))
        info.update({"sub_R0": families[0].R0, "super_R0": families[1].R0})
    return Setup(spec, grid, mass, initial, float(horizon), target, info, families)


# ---------------------------------------------------------------- run


def _energies(spec: ModelSpec, prof: RadialProfile) -> tuple[float, float]:
    if spec.c3 == 0 and spec.c2 > 0:
        return free_energy(prof, spec.m), rescaled_energy(prof)
    if spec.c2 == 0 and spec.c1 > 0:
        return entropy(prof, spec.m), math.nan
    return math.nan, math.nan


def _w2(prof: RadialProfile, target: RadialProfile | None) -> float:
    if target is None:
        return math.nan
    return wasserstein(2.0, prof.scaled_mass(1.0), target.scaled_mass(1.0))


def _fmt(x: float) -> str:
    return repr(float(x))


def _write_series(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SERIES_COLUMNS)
        for row in rows:
            w.writerow([_fmt(row[c]) for c in SERIES_COLUMNS])


def _write_json(path: Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(_jsonable(payload), fh, indent=2, sort_keys=True, allow_nan=True)
        fh.write("\n")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def _fit(cfg: ExperimentConfig, times: np.ndarray, w2: np.ndarray, dr: float, mode: str) -> dict | None:
    keep = np.isfinite(w2) & (w2 > 0)
    if mode == "none" or keep.sum() < 5:
        return None
    t, v = times[keep], w2[keep]
    if mode == "alg":
        t = t + 1.0
    window = cfg.fit_window
    if window is not None and mode == "alg" and cfg.scenario == "original_variables_rate":
        window = (math.exp(window[0]), math.exp(window[1]))
    if window is None:
        if cfg.preset == "aggregation":
            below = np.flatnonzero(v < 0.5 * dr)
            t_end = t[below[0]] if below.size else t[-1]
            window = (0.2 * t_end, t_end)
        else:
            window = (t.min() + 0.2 * (t.max() - t.min()), t.max())
    try:
        fit = fit_rate((t, v), "exponential" if mode == "exp" else "algebraic", window)
    except ValueError as exc:
        return {"error": str(exc)}
    out = fit.as_dict()
    out["time_shift"] = 1.0 if mode == "alg" else 0.0
    return out


def _output_dir(cfg: ExperimentConfig, override: str | Path | None) -> Path:
    if override:
        return Path(override)
    if cfg.output:
        path = Path(cfg.output)
        if path.is_absolute():
            return path
        return Path(os.environ.get(OUTPUT_ENV, "radialflow_output")) / path
    return Path(os.environ.get(OUTPUT_ENV, "radialflow_output")) / cfg.name


def run(cfg: ExperimentConfig, output: str | Path | None = None) -> tuple[int, Path]:
    """Run one experiment and write its artifacts; returns (status code, directory)."""
    out = _output_dir(cfg, output)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write_probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"[experiment] output: {out} is not writable ({exc})") from None
    summary: dict = {"scenario": cfg.scenario, "name": cfg.name, "config": asdict(cfg)}
    ledger = {"mass_drift": None, "relative_mass_drift": None, "positivity_clips": None, "ordering_violations": None}
    summary["ledger"] = ledger
    try:
        setup = build_setup(cfg)
        summary["setup"] = setup.info
        _execute(cfg, setup, out, summary, ledger)
    except ConfigError:
        raise
    except Exception as exc:  # the ledger is written even on failure
        summary["status"] = "error"
        summary["status_code"] = ERROR
        summary["message"] = f"{type(exc).__name__}: {exc}"
    _write_json(out / "summary.json", summary)
    return summary["status_code"], out


def _execute(cfg: ExperimentConfig, setup: Setup, out: Path, summary: dict, ledger: dict) -> None:
    ctrl = cfg.control
    horizon = setup.horizon
    n_snap = cfg.snapshots
    marks = [horizon * i / (n_snap - 1) for i in range(1, n_snap)] if n_snap > 1 else [horizon]
    traj = evolve(setup.initial, setup.spec, ctrl, horizon, snapshot_times=marks if horizon > 0 else None)

    rescaled_run = cfg.scenario == "original_variables_rate"
    rows = []
    profiles = []
    for t, prof in zip(traj.times, traj.profiles):
        target = setup.target
        if rescaled_run:
            # map the similarity-variable run back to original variables
            t = math.expm1(t)
            scale = (t + 1.0) ** (1.0 / cfg.d)
            prof = rescale_to_similarity(prof, t, "backward", prof.grid.scaled(scale))
            target = rescale_to_similarity(target, t, "backward", target.grid.scaled(scale)) if target else None
        energy, renergy = _energies(setup.spec, prof)
        rows.append({
            "t": t, "mass": prof.mass, "m2": second_moment(prof), "energy": energy,
            "rescaled_energy": renergy, "sup_density": prof.sup, "w2_to_target": _w2(prof, target),
            "dissipation_defect": dissipation_defect(prof, spec=setup.spec),
        })
        profiles.append(prof)
    for i, prof in enumerate(profiles):
        if i % cfg.save_every == 0 or i == len(profiles) - 1:
            prof.to_csv(out / f"snapshot_{i}.csv")
    _write_series(out / "series.csv", rows)

    final = traj.final
    initial_mass = setup.initial.mass
    ledger["mass_drift"] = abs(final.profile.mass - initial_mass)
    ledger["relative_mass_drift"] = abs(final.profile.mass - initial_mass) / initial_mass
    ledger["positivity_clips"] = final.drift
    ledger["steps"] = final.steps
    times = np.array([r["t"] for r in rows])
    if len(rows) > 1:
        dt = np.diff(times)
        for key, name in (("energy", "max_energy_increase_rate"), ("m2", "max_m2_decrease_rate")):
            vals = np.array([r[key] for r in rows])
            if np.all(np.isfinite(vals)):
                slope = np.diff(vals) / dt
                ledger[name] = float(np.max(slope) if key == "energy" else np.max(-slope))
    if setup.families is not None:
        worst = -math.inf
        for t, prof in zip(traj.times, traj.profiles):
            sub, sup = (barrier_profile(f, t, setup.grid) for f in setup.families)
            worst = max(worst, check_ordering(sub, prof).worst_violation, check_ordering(prof, sup).worst_violation)
        ledger["ordering_violations"] = worst
    else:
        ledger["ordering_violations"] = 0.0

    summary["status"] = traj.status
    summary["status_code"] = STATUS_CODES[traj.status]
    summary["message"] = traj.message
    summary["final_time"] = rows[-1]["t"]
    summary["final_w2"] = rows[-1]["w2_to_target"]
    summary["final_sup"] = rows[-1]["sup_density"]
    summary["snapshots"] = len(rows)
    summary["fit"] = _fit(cfg, times, np.array([r["w2_to_target"] for r in rows]), setup.grid.dr, cfg.fit)
    try:
        summary["mass_form_residual"] = mass_form_residual(final, step(final, setup.spec, ctrl), setup.spec)
    except (EvolutionError, ValueError):
        summary["mass_form_residual"] = None


# ---------------------------------------------------------------- sweep


def _override(raw: dict, axis: str, value: str) -> dict:
    raw = {s: dict(v) for s, v in raw.items()}
    if axis == "mass":
        # replace whichever of mass / mass_ratio the template resolves to
        key = "mass" if merge_sections(raw)["model"]["mass"].strip() else "mass_ratio"
        other = "mass_ratio" if key == "mass" else "mass"
        raw.setdefault("model", {}).update({key: value, other: ""})
    elif axis == "q":
        raw.setdefault("model", {})["q"] = value
    elif axis == "R0":
        raw.setdefault("initial", {})["R0"] = value
    else:
        raw.setdefault("grid", {})["n_cells"] = value
    return raw


def _sweep_instance(args) -> dict:
    raw, name, out = args
    try:
        cfg = parse_config(raw, name)
        code, _ = run(cfg, out)
    except ConfigError as exc:
        return {"status_code": CONFIG_ERROR, "message": str(exc)}
    with open(Path(out) / "summary.json") as fh:
        summary = json.load(fh)
    return summary


def sweep(raw: dict, name: str, axis: str, values: list[str], output: str | Path | None = None,
          workers: int | None = None) -> tuple[int, Path]:
    """Run one instance per value (concurrently) and aggregate the results."""
    if axis not in SWEEP_AXES:
        raise ConfigError(f"--axis: expected one of {', '.join(SWEEP_AXES)}, got {axis!r}")
    if len(values) < 2:
        raise ConfigError("--values: a sweep needs at least two values")
    for v in values:
        try:
            float(v)
        except ValueError:
            raise ConfigError(f"--values: {v!r} is not a number") from None
    parse_config(raw, name)  # validate the template
    root = Path(output) if output else Path(os.environ.get(OUTPUT_ENV, "radialflow_output")) / f"{name}_sweep_{axis}"
    root.mkdir(parents=True, exist_ok=True)
    jobs = [(_override(raw, axis, v), f"{name}_{axis}_{v}", str(root / f"{axis}_{v}")) for v in values]
    workers = workers or min(len(jobs), os.cpu_count() or 1)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_instance, jobs))
    else:
        results = [_sweep_instance(j) for j in jobs]

    cols = ("value", "status_code", "final_time", "final_w2", "final_sup", "fit_exponent", "fit_r2",
            "mass", "dr", "mass_form_residual", "relative_mass_drift")
    rows = []
    for v, res in zip(values, results):
        fit = res.get("fit") or {}
        setup = res.get("setup") or {}
        ledger = res.get("ledger") or {}
        rows.append({
            "value": float(v), "status_code": res.get("status_code", ERROR),
            "final_time": res.get("final_time"), "final_w2": res.get("final_w2"),
            "final_sup": res.get("final_sup"), "fit_exponent": fit.get("exponent"), "fit_r2": fit.get("r2"),
            "mass": setup.get("mass"), "dr": setup.get("dr"),
            "mass_form_residual": res.get("mass_form_residual"),
            "relative_mass_drift": ledger.get("relative_mass_drift"),
        })
    with open(root / "sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow(["" if row[c] is None else (str(row[c]) if c == "status_code" else _fmt(row[c])) for c in cols])

    report = {"axis": axis, "values": [float(v) for v in values], "instances": rows, "combined_fit": None}
    if axis == "mass":
        report["combined_fit"] = _loglog(rows, "mass", "final_sup")
    elif axis == "n_cells":
        report["combined_fit"] = {
            "mass_form_residual": _loglog(rows, "dr", "mass_form_residual"),
            "final_w2": _loglog(rows, "dr", "final_w2"),
        }
    worst = max(int(r["status_code"]) for r in rows)
    report["status_code"] = worst
    _write_json(root / "sweep.json", report)
    return worst, root


def _loglog(rows: list[dict], xkey: str, ykey: str) -> dict | None:
    pts = [(r[xkey], r[ykey]) for r in rows if r[xkey] and r[ykey] and r[xkey] > 0 and r[ykey] > 0]
    if len(pts) < 2:
        return None
    x = np.log([p[0] for p in pts])
    y = np.log([p[1] for p in pts])
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid**2)) / ss_tot if ss_tot > 0 else 1.0
    return {"x": xkey, "y": ykey, "slope": float(slope), "log_prefactor": float(intercept), "r2": r2}


# ---------------------------------------------------------------- one-shot commands


def stationary(preset_name: str, d: int, q: float | None = None, mass: float | None = None,
               a: float | None = None, n_cells: int = 256, output: str | Path | None = None) -> tuple[dict, Path]:
    """Stationary profile of a preset: CSV plus a JSON summary."""
    if preset_name == "pks_original":
        res = solve_u1(d, n_cells=n_cells)
        if mass is not None and not math.isclose(mass, res.total_mass, rel_tol=1e-6):
            raise ConfigError(f"--mass: every pks_original stationary profile has mass M_c = {res.total_mass!r}")
    elif preset_name == "pks_rescaled":
        res = solve_mu_A(d, 0.5 * critical_mass(d) if mass is None else mass, n_cells=n_cells)
    elif preset_name == "aggregation":
        if q is None:
            raise ConfigError("--q: the aggregation preset needs q")
        res = solve_us(d, q, 1.0 if mass is None else mass, n_cells=n_cells)
    elif preset_name == "fokker_planck":
        res = fokker_planck_profile(d, 1.0 / d if a is None else a, 1.0 if mass is None else mass, n_cells=n_cells)
    else:
        raise ConfigError(f"--preset: no finite-mass stationary profile for {preset_name!r}")
    out = Path(output) if output else Path(os.environ.get(OUTPUT_ENV, "radialflow_output")) / f"stationary_{preset_name}_d{d}"
    out.mkdir(parents=True, exist_ok=True)
    res.profile.to_csv(out / "profile.csv")
    summary = res.summary()
    _write_json(out / "summary.json", summary)
    return summary, out


def compare(path_a: str | Path, path_b: str | Path, d: int = 3) -> dict:
    """Mass-function ordering of two profiles written on the same grid."""
    a = read_profile_csv(path_a, d)
    b = read_profile_csv(path_b, d)
    if a.grid != b.grid:
        raise ConfigError("compare: the two profiles live on different grids")
    return check_ordering(a, b).as_dict()


def rates(path: str | Path, mode: str, column: str = "w2_to_target", window: tuple[float, float] | None = None,
          time_shift: float = 0.0) -> dict:
    """Fit a rate to one column of a ``series.csv``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows or "t" not in rows[0] or column not in rows[0]:
        raise ConfigError(f"{path}: expected columns 't' and {column!r}")
    t = np.array([float(r["t"]) for r in rows]) + time_shift
    v = np.array([float(r[column]) for r in rows])
    keep = np.isfinite(v) & (v > 0)
    fit: RateFit = fit_rate((t[keep], v[keep]), "exponential" if mode == "exp" else "algebraic", window)
    return fit.as_dict()


# ---------------------------------------------------------------- entry point


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="radialflow", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one experiment config")
    r.add_argument("config")
    r.add_argument("--output", help="artifact directory (overrides the config)")

    s = sub.add_parser("sweep", help="run a config over one parameter axis")
    s.add_argument("config")
    s.add_argument("--axis", required=True, choices=SWEEP_AXES)
    s.add_argument("--values", required=True, help="comma-separated values")
    s.add_argument("--output")
    s.add_argument("--workers", type=int)

    st = sub.add_parser("stationary", help="compute a stationary profile")
    st.add_argument("--preset", required=True, choices=PRESETS)
    st.add_argument("--d", type=int, required=True)
    st.add_argument("--q", type=float)
    st.add_argument("--mass", type=float)
    st.add_argument("--a", type=float, help="confinement coefficient for fokker_planck")
    st.add_argument("--n-cells", type=int, default=256)
    st.add_argument("--output")

    c = sub.add_parser("compare", help="mass-function ordering of two profile CSVs")
    c.add_argument("a")
    c.add_argument("b")
    c.add_argument("--d", type=int, default=3)

    rt = sub.add_parser("rates", help="fit a rate to a series.csv column")
    rt.add_argument("series")
    rt.add_argument("--mode", required=True, choices=("exp", "alg"))
    rt.add_argument("--column", default="w2_to_target")
    rt.add_argument("--window", type=float, nargs=2)
    rt.add_argument("--time-shift", type=float, default=0.0)
    return p


def _emit(payload: dict) -> None:
    print(json.dumps(_jsonable(payload), indent=2, sort_keys=True))


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        if args.command == "run":
            code, out = run(load_config(args.config), args.output)
            with open(out / "summary.json") as fh:
                summary = json.load(fh)
            _emit({k: summary.get(k) for k in ("status", "status_code", "final_time", "final_w2", "fit", "message")}
                  | {"output": str(out)})
            return code
        if args.command == "sweep":
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            code, out = sweep(read_sections(args.config), Path(args.config).stem, args.axis, values,
                              args.output, args.workers)
            with open(out / "sweep.json") as fh:
                report = json.load(fh)
            _emit({"status_code": code, "combined_fit": report["combined_fit"], "output": str(out)})
            return code
        if args.command == "stationary":
            summary, out = stationary(args.preset, args.d, args.q, args.mass, args.a, args.n_cells, args.output)
            _emit(summary | {"output": str(out)})
            return 0
        if args.command == "compare":
            _emit(compare(args.a, args.b, args.d))
            return 0
        _emit(rates(args.series, args.mode, args.column, tuple(args.window) if args.window else None,
                    args.time_shift))
        return 0
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return CONFIG_ERROR


if __name__ == "__main__":
    raise SystemExit(main())
