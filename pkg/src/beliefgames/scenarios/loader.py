"""JSON run configs: parsing, validation, and scenario construction.

One JSON file describes a whole run: which scenario, its physical and cost
parameters, solver settings, and simulation/tournament settings.  Validation
errors carry the dotted path of the offending entry; JSON syntax errors carry
the line and column.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ..exceptions import ConfigError
from ..solver import SolverConfig
from .base import Scenario
from .cars import CarParams
from .fields import rasterize_zones
from .guide_dog import guide_dog_model
from .lq import lq_scenario
from .racing import grid_start_sampler, racing_model, racing_progress
from .surveillance import surveillance_model
from .track import build_track, oval_centerline

SCHEMA_VERSION = 1
SCENARIO_NAMES = ("lq", "surveillance", "guide_dog", "racing")
CONTROLLER_KINDS = ("dg_bsp", "mpc_bsp", "dg_non_bsp")


def normalize_kind(name: str) -> str:
    """Canonical controller kind from a case/hyphen tolerant spelling."""
    kind = str(name).strip().lower().replace("-", "_")
    if kind not in CONTROLLER_KINDS:
        raise ConfigError(
            f"unknown controller kind {name!r}; expected one of {', '.join(CONTROLLER_KINDS)}"
        )
    return kind


class _View:
    """Dict wrapper that tracks its dotted path for error messages."""

    def __init__(self, data: dict, path: str = ""):
        self.data = data
        self.path = path

    def _at(self, key: str) -> str:
        return f"{self.path}.{key}" if self.path else str(key)

    def child(self, key: str, required: bool = True) -> Optional["_View"]:
        value = self.data.get(key)
        if value is None:
            if required:
                raise ConfigError(f"missing required section '{self._at(key)}'")
            return None
        if not isinstance(value, dict):
            raise ConfigError(f"'{self._at(key)}' must be an object")
        return _View(value, self._at(key))

    def number(self, key: str, default=None) -> float:
        value = self.data.get(key, default)
        if value is None:
            raise ConfigError(f"missing required number '{self._at(key)}'")
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"'{self._at(key)}' must be a finite number")
        return float(value)

    def integer(self, key: str, default=None) -> int:
        value = self.data.get(key, default)
        if value is None:
            raise ConfigError(f"missing required integer '{self._at(key)}'")
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"'{self._at(key)}' must be an integer")
        return int(value)

    def string(self, key: str, default=None) -> str:
        value = self.data.get(key, default)
        if value is None:
            raise ConfigError(f"missing required string '{self._at(key)}'")
        if not isinstance(value, str):
            raise ConfigError(f"'{self._at(key)}' must be a string")
        return value

    def vector(self, key: str, length: Optional[int] = None, default=None) -> np.ndarray:
        value = self.data.get(key, default)
        if value is None:
            raise ConfigError(f"missing required array '{self._at(key)}'")
        try:
            arr = np.asarray(value, dtype=float)
        except (TypeError, ValueError):
            raise ConfigError(f"'{self._at(key)}' must be a numeric array") from None
        if not np.all(np.isfinite(arr)):
            raise ConfigError(f"'{self._at(key)}' contains non-finite values")
        if length is not None and arr.shape != (length,):
            raise ConfigError(f"'{self._at(key)}' must have exactly {length} entries")
        return arr

    def matrix(self, key: str, shape: Optional[tuple] = None, default=None) -> np.ndarray:
        arr = self.vector(key, default=default)
        if shape is not None and arr.shape != shape:
            raise ConfigError(f"'{self._at(key)}' must have shape {shape}")
        return arr

    def items(self, key: str, required: bool = True) -> list["_View"]:
        value = self.data.get(key)
        if value is None:
            if required:
                raise ConfigError(f"missing required list '{self._at(key)}'")
            return []
        if not isinstance(value, list):
            raise ConfigError(f"'{self._at(key)}' must be a list")
        out = []
        for i, item in enumerate(value):
            if not isinstance(item, dict):
                raise ConfigError(f"'{self._at(key)}[{i}]' must be an object")
            out.append(_View(item, f"{self._at(key)}[{i}]"))
        return out


def parse_config_text(text: str, source: str = "config") -> dict:
    """Parse JSON config text; syntax errors report line and column."""
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{source}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(data, dict):
        raise ConfigError(f"{source}: top level must be a JSON object")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ConfigError(
            f"{source}: schema_version must be {SCHEMA_VERSION}, found {version!r}"
        )
    name = data.get("scenario")
    if name not in SCENARIO_NAMES:
        raise ConfigError(
            f"{source}: scenario must be one of {', '.join(SCENARIO_NAMES)}, found {name!r}"
        )
    return data


def parse_config_file(path) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config_text(text, source=str(path))


def _noise_field(view: _View, default_bounds=None):
    fv = view.child("field")
    if "bounds" in fv.data or default_bounds is None:
        bounds = tuple(fv.vector("bounds", length=4))
    else:
        bounds = default_bounds
    zones = []
    for zv in fv.items("zones", required=False):
        zones.append(
            {
                "center": zv.vector("center", length=2),
                "radius": zv.number("radius"),
                "scale": zv.number("scale"),
            }
        )
    return rasterize_zones(bounds, fv.number("cell", 0.25), fv.number("base", 1.0), zones)


def _car_params(view: _View, n_expected: int) -> list[CarParams]:
    cars = []
    for cv in view.items("cars"):
        cars.append(
            CarParams(
                wheelbase=cv.number("wheelbase", 0.5),
                drag=cv.number("drag", 0.0),
                slip=cv.number("slip", 0.0),
                control_noise=cv.number("control_noise", 0.0),
                yaw_noise=cv.number("yaw_noise", 0.0),
                footprint=cv.number("footprint", 0.25),
            )
        )
    if len(cars) != n_expected:
        raise ConfigError(f"'{view.path + '.' if view.path else ''}cars' must list {n_expected} cars")
    return cars


def _build_lq(v: _View) -> Scenario:
    return lq_scenario(
        horizon=v.integer("horizon", 20),
        tau=v.number("tau", 0.1),
        control_weight=v.number("control_weight", 0.5),
        goal_weight=v.number("goal_weight", 5.0),
        vel_weight=v.number("vel_weight", 1.0),
        goal=v.vector("goal", length=2, default=[4.0, 2.0]),
        x0=v.vector("x0", length=4, default=[0.0, 0.0, 0.0, 0.0]),
        cov0_diag=v.vector("cov0_diag", length=4, default=[0.05, 0.05, 0.01, 0.01]),
        sigma_motion=v.vector("sigma_motion", length=4, default=[0.02, 0.02, 0.01, 0.01]),
        sigma_obs=v.vector("sigma_obs", length=4, default=[0.1, 0.1, 0.05, 0.05]),
    )


def _build_surveillance(v: _View) -> Scenario:
    cars = _car_params(v, 2)
    field = _noise_field(v)
    model = surveillance_model(
        cars=cars,
        noise_field=field,
        sigma_motion=v.matrix("sigma_motion", shape=(2, 4)),
        sigma_obs=v.vector("sigma_obs", length=2),
        tau=v.number("tau", 0.1),
        control_weights=v.matrix("control_weights", shape=(2, 2)),
        desired_speed=v.number("desired_speed"),
        speed_weight=v.number("speed_weight"),
        avoid_weight=v.number("avoid_weight"),
        info_weight=v.number("info_weight"),
    )
    return Scenario(
        name="surveillance",
        model=model,
        x0=v.vector("x0", length=8),
        cov0=np.diag(v.vector("cov0_diag", length=8)),
        horizon=v.integer("horizon"),
        noise_field=field,
        footprint_radii=(cars[0].footprint, cars[1].footprint),
    )


def _build_guide_dog(v: _View) -> Scenario:
    field = _noise_field(v)
    model = guide_dog_model(
        masses=tuple(v.vector("masses", length=2)),
        frictions=tuple(v.vector("frictions", length=2)),
        spring=v.number("spring"),
        leash=v.number("leash"),
        noise_field=field,
        sigma_motion=v.matrix("sigma_motion", shape=(2, 4)),
        sigma_obs=v.vector("sigma_obs", length=2),
        tau=v.number("tau", 0.1),
        control_weights=v.matrix("control_weights", shape=(2, 2)),
        accel_weight=v.number("accel_weight"),
        info_weight=v.number("info_weight"),
        goal_weight=v.number("goal_weight"),
        goal=v.vector("goal", length=2),
    )
    return Scenario(
        name="guide_dog",
        model=model,
        x0=v.vector("x0", length=8),
        cov0=np.diag(v.vector("cov0_diag", length=8)),
        horizon=v.integer("horizon"),
        noise_field=field,
    )


def _build_racing(v: _View) -> Scenario:
    tv = v.child("track")
    if "centerline" in tv.data:
        center = tv.matrix("centerline")
        if center.ndim != 2 or center.shape[1] != 2:
            raise ConfigError(f"'{tv.path}.centerline' must be a list of [x, y] points")
    else:
        center = oval_centerline(
            straight=tv.number("straight"),
            radius=tv.number("radius"),
            n_points=tv.integer("n_points", 160),
        )
    track = build_track(
        center,
        half_width=tv.number("half_width"),
        cell=tv.number("cell", 0.2),
        margin=tv.number("margin", 1.0),
    )

    cars = _car_params(v, v.integer("n_agents", 2))
    n = len(cars)
    pad = track.half_width + 1.0
    default_bounds = (
        float(track.centerline[:, 0].min() - pad),
        float(track.centerline[:, 0].max() + pad),
        float(track.centerline[:, 1].min() - pad),
        float(track.centerline[:, 1].max() + pad),
    )
    field = _noise_field(v, default_bounds=default_bounds)

    model = racing_model(
        track=track,
        cars=cars,
        noise_field=field,
        sigma_motion=v.matrix("sigma_motion", shape=(n, 4)),
        sigma_obs=v.vector("sigma_obs", length=n),
        tau=v.number("tau", 0.1),
        control_weights=v.matrix("control_weights", shape=(n, 2)),
        track_weight=v.number("track_weight"),
        track_sharpness=v.number("track_sharpness"),
        collision_weight=v.number("collision_weight"),
        collision_sharpness=v.number("collision_sharpness"),
        bound_weight=v.number("bound_weight"),
        bound_sharpness=v.number("bound_sharpness"),
        accel_limit=v.number("accel_limit"),
        steer_limit=v.number("steer_limit"),
        progress_weight=v.number("progress_weight"),
    )

    sv = v.child("start")
    slots = sv.vector("slots", length=n)
    lateral = sv.vector("lateral", length=n, default=[0.0] * n)
    speed = sv.number("speed", 0.5)
    jitter = sv.number("jitter", 2.0)
    sampler = grid_start_sampler(track, slots, lateral, jitter, speed)
    x0 = grid_start_sampler(track, slots, lateral, 0.0, speed)(np.random.default_rng(0))
    return Scenario(
        name="racing",
        model=model,
        x0=x0,
        cov0=np.diag(np.tile(v.vector("cov0_diag", length=4), n)),
        horizon=v.integer("horizon"),
        track=track,
        noise_field=field,
        footprint_radii=tuple(c.footprint for c in cars),
        start_sampler=sampler,
        progress_of=racing_progress(track, model.layout),
    )


_BUILDERS = {
    "lq": _build_lq,
    "surveillance": _build_surveillance,
    "guide_dog": _build_guide_dog,
    "racing": _build_racing,
}


def build_scenario(cfg: dict) -> Scenario:
    """Construct the Scenario described by a parsed config dict."""
    v = _View(cfg)
    return _BUILDERS[v.string("scenario")](v)


def solver_config(
    cfg: dict, horizon: Optional[int] = None, section: Optional[str] = None
) -> SolverConfig:
    """SolverConfig from the optional 'solver' section.

    A command section ('simulation', 'race', 'bench') may carry its own
    'solver' object whose entries overlay the top-level ones, so replans can
    run shorter horizons and tighter iteration budgets than a full solve.
    An explicit horizon argument wins over everything.
    """
    v = _View(cfg)
    base = v.child("solver", required=False)
    data = dict(base.data) if base is not None else {}
    label = "solver"
    if section is not None:
        sec = v.child(section, required=False)
        over = sec.child("solver", required=False) if sec is not None else None
        if over is not None:
            data.update(over.data)
            label = f"{section}.solver"
    sv = _View(data, label)
    if horizon is None:
        horizon = sv.integer("horizon") if "horizon" in data else v.integer("horizon")
    return SolverConfig(
        horizon=horizon,
        epsilon=sv.number("epsilon", 1e-4),
        max_iterations=sv.integer("max_iterations", 100),
        mu_u=sv.number("mu_u", 1e-6),
        mu_b=sv.number("mu_b", 1e-6),
        mu_up=sv.number("mu_up", 10.0),
        mu_down=sv.number("mu_down", 0.5),
        mu_min=sv.number("mu_min", 1e-9),
        mu_max=sv.number("mu_max", 1e10),
        accept_slack=sv.number("accept_slack", 1e-3),
    )


def _flag(view: _View, key: str, default: bool) -> bool:
    value = view.data.get(key, default)
    if not isinstance(value, bool):
        raise ConfigError(f"'{view._at(key)}' must be true or false")
    return value


@dataclass(frozen=True)
class SimSettings:
    """Episode-level settings: length, replan cadence, controller per agent."""

    n_steps: int
    replan_period: int
    controllers: tuple[str, ...]
    warm_start: bool


@dataclass(frozen=True)
class RaceSettings:
    """Tournament settings; agent 0 is 'fast', agent 1 is 'slow'."""

    n_races: int
    n_steps: int
    replan_period: int
    controller_fast: str
    controller_slow: str
    lead_bin: float
    jobs: int
    warm_start: bool


def sim_settings(cfg: dict, n_agents: int) -> SimSettings:
    v = _View(cfg)
    sv = v.child("simulation", required=False) or _View({}, "simulation")
    raw = sv.data.get("controllers")
    if raw is None:
        kinds = ("dg_bsp",) * n_agents
    else:
        if not isinstance(raw, list) or len(raw) != n_agents:
            raise ConfigError(f"'simulation.controllers' must list {n_agents} controller kinds")
        kinds = tuple(normalize_kind(k) for k in raw)
    n_steps = sv.integer("n_steps", 100)
    period = sv.integer("replan_period", 1)
    if n_steps < 1 or period < 1:
        raise ConfigError("'simulation.n_steps' and 'simulation.replan_period' must be >= 1")
    return SimSettings(
        n_steps=n_steps,
        replan_period=period,
        controllers=kinds,
        warm_start=_flag(sv, "warm_start", False),
    )


def race_settings(cfg: dict) -> RaceSettings:
    v = _View(cfg)
    rv = v.child("race", required=False) or _View({}, "race")
    sim = v.child("simulation", required=False) or _View({}, "simulation")
    n_races = rv.integer("n_races", 100)
    n_steps = rv.integer("n_steps", sim.integer("n_steps", 400))
    period = rv.integer("replan_period", sim.integer("replan_period", 1))
    if n_races < 1 or n_steps < 1 or period < 1:
        raise ConfigError("'race' counts must be >= 1")
    return RaceSettings(
        n_races=n_races,
        n_steps=n_steps,
        replan_period=period,
        controller_fast=normalize_kind(rv.string("controller_fast", "dg_bsp")),
        controller_slow=normalize_kind(rv.string("controller_slow", "mpc_bsp")),
        lead_bin=rv.number("lead_bin", 1.0),
        jobs=rv.integer("jobs", 0),
        warm_start=_flag(rv, "warm_start", _flag(sim, "warm_start", False)),
    )
