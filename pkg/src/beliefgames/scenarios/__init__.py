"""Concrete game scenarios and the config machinery that builds them."""

from .base import Scenario, observation_full_state, observation_positions
from .cars import CarParams, car_fleet_dynamics, fleet_speeds
from .costs import chance_bound, cov_flat_indices, det2, read_cov_block, soft_penalty
from .fields import NoiseField, bilinear, rasterize_zones
from .guide_dog import guide_dog_model, tether_force
from .loader import (
    CONTROLLER_KINDS,
    RaceSettings,
    SCENARIO_NAMES,
    SCHEMA_VERSION,
    SimSettings,
    build_scenario,
    normalize_kind,
    parse_config_file,
    parse_config_text,
    race_settings,
    sim_settings,
    solver_config,
)
from .lq import lq_model, lq_riccati_gains, lq_scenario
from .racing import grid_start_sampler, racing_model, racing_progress
from .surveillance import surveillance_model
from .track import TrackMap, build_track, oval_centerline

__all__ = [
    "CONTROLLER_KINDS",
    "CarParams",
    "NoiseField",
    "RaceSettings",
    "SCENARIO_NAMES",
    "SCHEMA_VERSION",
    "Scenario",
    "SimSettings",
    "TrackMap",
    "bilinear",
    "build_scenario",
    "build_track",
    "car_fleet_dynamics",
    "chance_bound",
    "cov_flat_indices",
    "det2",
    "fleet_speeds",
    "grid_start_sampler",
    "guide_dog_model",
    "lq_model",
    "lq_riccati_gains",
    "lq_scenario",
    "normalize_kind",
    "observation_full_state",
    "observation_positions",
    "oval_centerline",
    "parse_config_file",
    "parse_config_text",
    "race_settings",
    "racing_model",
    "racing_progress",
    "rasterize_zones",
    "read_cov_block",
    "sim_settings",
    "soft_penalty",
    "solver_config",
    "surveillance_model",
    "tether_force",
]
