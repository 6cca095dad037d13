"""Single-agent planar double integrator with quadratic goal costs.

Linear dynamics plus constant Gaussian noise make this the one scenario whose
optimum is known in closed form, so it anchors the regression tests and gives
the command line a fast, deterministic demo problem.
"""

from __future__ import annotations

import numpy as np

from ..belief import GameModel, JointLayout
from .base import Scenario


def lq_model(
    tau: float,
    control_weight: float,
    goal_weight: float,
    vel_weight: float,
    goal: np.ndarray,
    sigma_motion: np.ndarray,
    sigma_obs: np.ndarray,
) -> GameModel:
    """One point mass steered to a goal; full-state constant-noise observations.

    State is [x, y, vx, vy], control is planar acceleration.  The stage cost
    is pure control effort; goal and velocity penalties act at the horizon.
    """
    lay = JointLayout((4,), (2,), (4,))
    goal = np.asarray(goal, dtype=float).reshape(2)
    sig_m = np.asarray(sigma_motion, dtype=float)
    sig_z = np.asarray(sigma_obs, dtype=float)

    def f(x, u, m):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        u = np.atleast_2d(np.asarray(u, dtype=float))
        m = np.atleast_2d(np.asarray(m, dtype=float))
        step = np.concatenate([x[:, 2:4], u], axis=1)
        return x + tau * step + sig_m * m

    def h(x, n):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        n = np.atleast_2d(np.asarray(n, dtype=float))
        return x + sig_z * n

    def stage(b, u):
        return control_weight * np.einsum("kj,kj->k", u, u)

    def terminal(b):
        miss = b[:, 0:2] - goal
        return goal_weight * np.einsum("kj,kj->k", miss, miss) + vel_weight * np.einsum(
            "kj,kj->k", b[:, 2:4], b[:, 2:4]
        )

    return GameModel(
        layout=lay,
        dynamics=f,
        observation=h,
        stage_costs=(stage,),
        terminal_costs=(terminal,),
        tau=tau,
        stage_cost_support=(lay.n_b + np.arange(2),),
        terminal_cost_support=(np.arange(4),),
    )


def lq_riccati_gains(
    model: GameModel, horizon: int, control_weight: float, goal_weight: float, vel_weight: float
) -> list[np.ndarray]:
    """Mean-block feedback gains of the equivalent finite-horizon regulator.

    Independent check used by the tests: the linear problem above separates,
    so the solver's gains on the mean coordinates must match the standard
    backward Riccati recursion stage by stage.
    """
    tau = model.tau
    A = np.eye(4)
    A[0, 2] = A[1, 3] = tau
    B = np.zeros((4, 2))
    B[2, 0] = B[3, 1] = tau
    Q = np.zeros((4, 4))
    Qf = np.diag([2.0 * goal_weight, 2.0 * goal_weight, 2.0 * vel_weight, 2.0 * vel_weight])
    R = 2.0 * control_weight * np.eye(2)
    P = Qf
    gains: list[np.ndarray] = []
    for _ in range(horizon):
        K = np.linalg.solve(R + B.T @ P @ B, B.T @ P @ A)
        P = Q + A.T @ P @ (A - B @ K)
        P = (P + P.T) / 2.0
        gains.append(K)
    gains.reverse()
    return gains


def lq_scenario(
    horizon: int = 20,
    tau: float = 0.1,
    control_weight: float = 0.5,
    goal_weight: float = 5.0,
    vel_weight: float = 1.0,
    goal=(4.0, 2.0),
    x0=(0.0, 0.0, 0.0, 0.0),
    cov0_diag=(0.05, 0.05, 0.01, 0.01),
    sigma_motion=(0.02, 0.02, 0.01, 0.01),
    sigma_obs=(0.1, 0.1, 0.05, 0.05),
) -> Scenario:
    """Default goal-reaching instance used by tests and the CLI demo config."""
    model = lq_model(
        tau=tau,
        control_weight=control_weight,
        goal_weight=goal_weight,
        vel_weight=vel_weight,
        goal=np.asarray(goal, dtype=float),
        sigma_motion=np.asarray(sigma_motion, dtype=float),
        sigma_obs=np.asarray(sigma_obs, dtype=float),
    )
    return Scenario(
        name="lq",
        model=model,
        x0=np.asarray(x0, dtype=float),
        cov0=np.diag(np.asarray(cov0_diag, dtype=float)),
        horizon=horizon,
    )
