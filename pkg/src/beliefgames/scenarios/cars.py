"""Kinematic bicycle fleet dynamics shared by the driving scenarios.

Per-agent state is [x, y, heading, speed] and control is [accel, steer].
Heading rate is speed * tan(steer) / wheelbase; speed decays with drag and
loses energy with squared yaw rate (slip).  Per-step motion noise is scaled
by a floor plus squared control effort and squared yaw rate, so uncertainty
grows exactly when driving hard.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..belief import JointLayout


@dataclass(frozen=True)
class CarParams:
    """Geometry, drag/slip coefficients, and noise growth for one car."""

    wheelbase: float = 0.5
    drag: float = 0.0
    slip: float = 0.0
    control_noise: float = 0.0
    yaw_noise: float = 0.0
    footprint: float = 0.25


# Actuator saturation. Feedback-corrected controls are not otherwise bounded:
# tan() is singular at +-pi/2, and unbounded thrust would let a diverged
# feedback policy inject astronomical velocities into the plant. Both caps sit
# far outside the soft cost bounds, so they are invisible to healthy plans.
MAX_STEER = 1.35
MAX_ACCEL = 10.0


def car_fleet_dynamics(layout: JointLayout, params, sigma_motion: np.ndarray, tau: float):
    """Batched Euler step for a fleet of bicycle-model cars.

    sigma_motion has one row of per-coordinate one-step noise scales per car.
    Returns f(x, u, m) where the motion noise vector m has length n_x.
    """
    sigma = np.asarray(sigma_motion, dtype=float)

    def f(x, u, m):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        m = np.atleast_2d(np.asarray(m, dtype=float))
        out = np.empty_like(x)
        for i, car in enumerate(params):
            sx = layout.state_slice(i)
            su = layout.control_slice(i)
            th = x[:, sx.start + 2]
            v = x[:, sx.start + 3]
            acc = np.clip(u[:, su.start], -MAX_ACCEL, MAX_ACCEL)
            steer = np.clip(u[:, su.start + 1], -MAX_STEER, MAX_STEER)
            thdot = v * np.tan(steer) / car.wheelbase
            # Slip is a deceleration: it opposes the direction of travel.
            # Unsigned it would pump energy into reverse motion.
            vdot = acc - car.drag * v - car.slip * thdot**2 * np.sign(v)
            scale = (
                1.0
                + car.control_noise * (acc**2 + steer**2)
                + car.yaw_noise * thdot**2
            )
            step = np.stack([v * np.cos(th), v * np.sin(th), thdot, vdot], axis=1)
            out[:, sx] = x[:, sx] + tau * step + sigma[i] * scale[:, None] * m[:, sx]
        return out

    return f


def fleet_speeds(layout: JointLayout, x: np.ndarray) -> np.ndarray:
    """Per-agent speeds from a batch of joint states."""
    x = np.atleast_2d(x)
    return np.stack(
        [x[:, layout.state_slice(i).start + 3] for i in range(layout.n_agents)], axis=1
    )
