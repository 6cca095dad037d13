"""Autonomous racing: two cars trade progress on a closed noisy track.

Stage costs are control effort, a soft track-containment barrier, a soft
pairwise collision barrier, and soft control bounds.  Both barriers inflate
their margins by a chance bound derived from the planned position covariance,
which is what couples racing lines to the information the cars expect to
gather.  The terminal cost is the (antisymmetric) relative arc-length lead.
"""

from __future__ import annotations

import numpy as np

from ..belief import GameModel, JointLayout
from .base import observation_full_state
from .cars import CarParams, car_fleet_dynamics
from .costs import chance_bound, cov_flat_indices, read_cov_block, soft_penalty
from .fields import NoiseField
from .track import TrackMap


def racing_model(
    track: TrackMap,
    cars: list[CarParams],
    noise_field: NoiseField,
    sigma_motion: np.ndarray,
    sigma_obs: np.ndarray,
    tau: float,
    control_weights: np.ndarray,
    track_weight: float,
    track_sharpness: float,
    collision_weight: float,
    collision_sharpness: float,
    bound_weight: float,
    bound_sharpness: float,
    accel_limit: float,
    steer_limit: float,
    progress_weight: float,
    progress_anchor: float = 0.0,
) -> GameModel:
    """Racing game for one or more cars on a shared closed track.

    With a single car the terminal cost is its own progress unwrapped around
    progress_anchor; with several it is the pairwise relative progress, which
    needs no anchor because leads are wrapped to the nearest half lap.
    """
    n = len(cars)
    lay = JointLayout((4,) * n, (2,) * n, (4,) * n)
    r_w = np.asarray(control_weights, dtype=float)
    f = car_fleet_dynamics(lay, cars, sigma_motion, tau)
    h = observation_full_state(lay, noise_field, sigma_obs)

    pos_idx = [np.array([lay.state_slice(i).start, lay.state_slice(i).start + 1]) for i in range(n)]

    def make_stage(i):
        own_u = lay.control_slice(i)
        d_max = track.half_width - cars[i].footprint

        def stage(b, u):
            uu = u[:, own_u]
            cost = np.einsum("kj,j,kj->k", uu, r_w[i], uu)
            pos = b[:, pos_idx[i]]
            cov_own = read_cov_block(b, lay, pos_idx[i])
            alpha = chance_bound(cov_own)
            cost = cost + soft_penalty(
                (d_max - alpha) - track.distance(pos), track_weight, track_sharpness
            )
            for j in range(n):
                if j == i:
                    continue
                gap = np.linalg.norm(pos - b[:, pos_idx[j]], axis=1)
                r_coll = cars[i].footprint + cars[j].footprint
                alpha_pair = chance_bound(cov_own + read_cov_block(b, lay, pos_idx[j]))
                cost = cost + soft_penalty(
                    gap - (r_coll + alpha_pair), collision_weight, collision_sharpness
                )
            acc, steer = uu[:, 0], uu[:, 1]
            cost = cost + soft_penalty(accel_limit - acc, bound_weight, bound_sharpness)
            cost = cost + soft_penalty(acc + accel_limit, bound_weight, bound_sharpness)
            cost = cost + soft_penalty(steer_limit - steer, bound_weight, bound_sharpness)
            cost = cost + soft_penalty(steer + steer_limit, bound_weight, bound_sharpness)
            return cost

        return stage

    def make_terminal(i):
        def terminal(b):
            r_own = track.progress(b[:, pos_idx[i]])
            if n == 1:
                return -progress_weight * track.centered_delta(r_own, progress_anchor)
            lead = np.zeros(b.shape[0])
            for j in range(n):
                if j != i:
                    lead = lead + track.centered_delta(r_own, track.progress(b[:, pos_idx[j]]))
            return -progress_weight * lead

        return terminal

    all_pos = np.concatenate(pos_idx)
    all_pos_cov = np.unique(
        np.concatenate([cov_flat_indices(lay, p) for p in pos_idx])
    )
    sup_stage = tuple(
        np.unique(np.concatenate([all_pos, all_pos_cov, lay.n_b + np.asarray(lay.control_indices(i))]))
        for i in range(n)
    )
    sup_term = tuple(all_pos.copy() for _ in range(n))
    return GameModel(
        layout=lay,
        dynamics=f,
        observation=h,
        stage_costs=tuple(make_stage(i) for i in range(n)),
        terminal_costs=tuple(make_terminal(i) for i in range(n)),
        tau=tau,
        stage_cost_support=sup_stage,
        terminal_cost_support=sup_term,
    )


def racing_progress(track: TrackMap, layout: JointLayout):
    """Per-agent wrapped arc progress of true joint states."""

    def progress(x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        cols = []
        for i in range(layout.n_agents):
            s = layout.state_slice(i)
            cols.append(track.progress(x[:, s.start : s.start + 2]))
        return np.stack(cols, axis=1)

    return progress


def grid_start_sampler(
    track: TrackMap,
    slots: np.ndarray,
    lateral: np.ndarray,
    jitter: float,
    speed: float,
):
    """Start-state sampler: slot arc positions with uniform longitudinal jitter.

    Each car is placed at its (jittered) arc position, offset laterally from
    the centerline, heading along the track tangent at the slot. The lateral
    arrangement is mirrored across the centerline on a coin flip: on a closed
    loop the inner lane is shorter by 2*pi*offset per lap, and a fixed
    assignment would hand one car that edge in every race.
    """
    slots = np.asarray(slots, dtype=float)
    lateral = np.asarray(lateral, dtype=float)

    def sample(rng: np.random.Generator) -> np.ndarray:
        out = np.zeros(4 * slots.size)
        mirror = -1.0 if rng.random() < 0.5 else 1.0
        for i, s in enumerate(slots):
            s_j = s + rng.uniform(-jitter, jitter)
            p = track.point_at(s_j)
            heading = track.heading_at(s_j)
            normal = np.array([-np.sin(heading), np.cos(heading)])
            p = p + mirror * lateral[i] * normal
            out[4 * i : 4 * i + 4] = [p[0], p[1], heading, speed]
        return out

    return sample
