"""Scenario bundle: a game model plus everything the harness needs around it."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from ..belief import GameModel
from .fields import NoiseField
from .track import TrackMap


@dataclass(frozen=True)
class Scenario:
    """A game model with start conditions and optional scoring hooks.

    start_sampler(rng) draws a randomized initial joint state (tournaments);
    progress_of maps joint states (K, n_x) to per-agent arc progress
    (K, n_agents) for racing scorekeeping.
    """

    name: str
    model: GameModel
    x0: np.ndarray
    cov0: np.ndarray
    horizon: int
    track: Optional[TrackMap] = None
    noise_field: Optional[NoiseField] = None
    footprint_radii: Optional[tuple[float, ...]] = None
    start_sampler: Optional[Callable[[np.random.Generator], np.ndarray]] = None
    progress_of: Optional[Callable[[np.ndarray], np.ndarray]] = None

    @property
    def n_agents(self) -> int:
        return self.model.layout.n_agents


def observation_full_state(layout, field: NoiseField, sigma_obs: np.ndarray):
    """Each agent measures its own full state; noise scales with the light
    field at its own position."""
    sigma = np.asarray(sigma_obs, dtype=float)

    def h(x, n):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = np.atleast_2d(np.asarray(n, dtype=float))
        out = np.empty((x.shape[0], layout.n_z))
        for i in range(layout.n_agents):
            sx = layout.state_slice(i)
            sz = layout.measurement_slice(i)
            mult = field.query(x[:, sx.start : sx.start + 2])
            out[:, sz] = x[:, sx.start : sx.start + sigma[i].size] + sigma[i] * mult[:, None] * n[:, sz]
        return out

    return h


def observation_positions(layout, field: NoiseField, sigma_obs: np.ndarray):
    """Each agent measures its own planar position only."""
    sigma = np.asarray(sigma_obs, dtype=float)

    def h(x, n):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = np.atleast_2d(np.asarray(n, dtype=float))
        out = np.empty((x.shape[0], layout.n_z))
        for i in range(layout.n_agents):
            sx = layout.state_slice(i)
            sz = layout.measurement_slice(i)
            pos = x[:, sx.start : sx.start + 2]
            mult = field.query(pos)
            out[:, sz] = pos + sigma[i] * mult[:, None] * n[:, sz]
        return out

    return h
