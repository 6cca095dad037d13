"""Active surveillance: an observer car herds a target car into the light.

The observer (agent 0) pays only control effort during the episode but is
charged the determinant of the target's terminal position covariance, so it
profits from maneuvering the target through low-noise regions.  The target
(agent 1) tracks a desired speed and swerves to keep its distance from the
observer, which is the lever the observer exploits.
"""

from __future__ import annotations

import numpy as np

from ..belief import GameModel, JointLayout
from .base import observation_positions
from .cars import CarParams, car_fleet_dynamics
from .costs import cov_flat_indices, det2, read_cov_block
from .fields import NoiseField


def surveillance_model(
    cars: list[CarParams],
    noise_field: NoiseField,
    sigma_motion: np.ndarray,
    sigma_obs: np.ndarray,
    tau: float,
    control_weights: np.ndarray,
    desired_speed: float,
    speed_weight: float,
    avoid_weight: float,
    info_weight: float,
) -> GameModel:
    """Two-car pursuit game; agent 0 observes, agent 1 drives."""
    lay = JointLayout((4, 4), (2, 2), (2, 2))
    n_b = lay.n_b
    r_w = np.asarray(control_weights, dtype=float)
    r_sum = cars[0].footprint + cars[1].footprint
    f = car_fleet_dynamics(lay, cars, sigma_motion, tau)
    h = observation_positions(lay, noise_field, sigma_obs)

    def separation(b):
        return np.linalg.norm(b[:, 0:2] - b[:, 4:6], axis=1) - r_sum

    def stage_observer(b, u):
        uu = u[:, 0:2]
        return np.einsum("kj,j,kj->k", uu, r_w[0], uu)

    def stage_target(b, u):
        uu = u[:, 2:4]
        effort = np.einsum("kj,j,kj->k", uu, r_w[1], uu)
        speed = speed_weight * (b[:, 7] - desired_speed) ** 2
        avoid = avoid_weight * np.exp(-separation(b))
        return effort + speed + avoid

    def terminal_observer(b):
        cov = read_cov_block(b, lay, (4, 5))
        return info_weight * det2(cov)

    def terminal_target(b):
        speed = speed_weight * (b[:, 7] - desired_speed) ** 2
        return speed + avoid_weight * np.exp(-separation(b))

    u0 = lay.n_b + np.arange(2)
    u1 = lay.n_b + 2 + np.arange(2)
    sup_stage = (
        u0,
        np.unique(np.concatenate([np.array([0, 1, 4, 5, 7]), u1])),
    )
    sup_term = (
        cov_flat_indices(lay, (4, 5)),
        np.array([0, 1, 4, 5, 7]),
    )
    return GameModel(
        layout=lay,
        dynamics=f,
        observation=h,
        stage_costs=(stage_observer, stage_target),
        terminal_costs=(terminal_observer, terminal_target),
        tau=tau,
        stage_cost_support=sup_stage,
        terminal_cost_support=sup_term,
    )
