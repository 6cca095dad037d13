"""Guide dog: a sighted agent tows a passive one to a goal through the light.

Two point masses joined by a slack leash.  The blind agent (agent 0) never
steers toward anything; it only dislikes control effort and being jerked
around.  The dog (agent 1) is charged, at the horizon end, for the blind
agent's position uncertainty and for its distance to the goal, so the optimal
tow detours through low-noise regions.
"""

from __future__ import annotations

import numpy as np

from ..belief import GameModel, JointLayout
from .base import observation_full_state
from .costs import cov_flat_indices, det2, read_cov_block
from .fields import NoiseField

_DIST_GUARD = 1e-9


def tether_force(delta: np.ndarray, spring: float, leash: float) -> np.ndarray:
    """Spring force along delta = r_blind - r_dog; zero while the leash is slack.

    Guarded at delta = 0 where the direction is undefined (the stretch is zero
    there anyway for any positive leash length).
    """
    delta = np.atleast_2d(np.asarray(delta, dtype=float))
    dist = np.linalg.norm(delta, axis=1)
    stretch = np.maximum(dist - leash, 0.0)
    safe = np.maximum(dist, _DIST_GUARD)
    return delta * (spring * stretch / safe)[:, None]


def guide_dog_model(
    masses: tuple[float, float],
    frictions: tuple[float, float],
    spring: float,
    leash: float,
    noise_field: NoiseField,
    sigma_motion: np.ndarray,
    sigma_obs: np.ndarray,
    tau: float,
    control_weights: np.ndarray,
    accel_weight: float,
    info_weight: float,
    goal_weight: float,
    goal: np.ndarray,
) -> GameModel:
    """Two tethered point masses; agent 0 is towed, agent 1 leads."""
    lay = JointLayout((4, 4), (2, 2), (4, 4))
    sigma = np.asarray(sigma_motion, dtype=float)
    r_w = np.asarray(control_weights, dtype=float)
    goal = np.asarray(goal, dtype=float).reshape(2)

    def accelerations(x, u):
        delta = x[:, 0:2] - x[:, 4:6]
        fs = tether_force(delta, spring, leash)
        a_blind = (u[:, 0:2] - fs - frictions[0] * x[:, 2:4]) / masses[0]
        a_dog = (u[:, 2:4] + fs - frictions[1] * x[:, 6:8]) / masses[1]
        return a_blind, a_dog

    def f(x, u, m):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        m = np.atleast_2d(np.asarray(m, dtype=float))
        a_blind, a_dog = accelerations(x, u)
        step = np.concatenate([x[:, 2:4], a_blind, x[:, 6:8], a_dog], axis=1)
        return x + tau * step + np.concatenate([sigma[0], sigma[1]]) * m

    h = observation_full_state(lay, noise_field, sigma_obs)

    def stage_blind(b, u):
        uu = u[:, 0:2]
        a_blind, _ = accelerations(b[:, : lay.n_x], u)
        return (
            np.einsum("kj,j,kj->k", uu, r_w[0], uu)
            + accel_weight * np.einsum("kj,kj->k", a_blind, a_blind)
        )

    def stage_dog(b, u):
        uu = u[:, 2:4]
        return np.einsum("kj,j,kj->k", uu, r_w[1], uu)

    def terminal_blind(b):
        return np.zeros(b.shape[0])

    def terminal_dog(b):
        cov = read_cov_block(b, lay, (0, 1))
        miss = b[:, 0:2] - goal
        return info_weight * det2(cov) + goal_weight * np.einsum("kj,kj->k", miss, miss)

    u0 = lay.n_b + np.arange(2)
    u1 = lay.n_b + 2 + np.arange(2)
    sup_stage = (
        np.unique(np.concatenate([np.array([0, 1, 2, 3, 4, 5]), u0])),
        u1,
    )
    sup_term = (
        np.array([], dtype=int),
        np.unique(np.concatenate([np.array([0, 1]), cov_flat_indices(lay, (0, 1))])),
    )
    return GameModel(
        layout=lay,
        dynamics=f,
        observation=h,
        stage_costs=(stage_blind, stage_dog),
        terminal_costs=(terminal_blind, terminal_dog),
        tau=tau,
        stage_cost_support=sup_stage,
        terminal_cost_support=sup_term,
    )
