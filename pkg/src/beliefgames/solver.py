"""Iterative local Nash solver for dynamic games in Gaussian belief space.

Each iteration quadratizes every agent's cost-to-go along the nominal belief
trajectory, solves a stacked linear-quadratic game stage by stage for a joint
affine policy, and rolls the policy forward without noise.  A pass is accepted
when every agent's realized return improves on (or matches, within slack) the
value its own quadratic model forecast for the step; control and belief
regularization scale up on rejection and down on acceptance, Levenberg-
Marquardt style.  Equilibrium steps of a game routinely raise one agent's
return while lowering another's, so acceptance judges model fidelity, not
joint descent.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import numdiff
from .belief import GameModel, GaussianBelief, mean_and_noise_batch, vec_belief
from .exceptions import (
    DifferentiationDomainError,
    DimensionMismatchError,
    ForwardPassDivergedError,
    IllConditionedObservationError,
    NonFiniteCostError,
    StageGameSingularError,
)
from .numdiff import CostQuadratic, DynamicsLinearization

log = logging.getLogger(__name__)

# Relative tolerance of the stacked stationarity solve.
STAGE_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class SolverConfig:
    """Outer-loop settings: horizon, stop rule, and regularization schedule.

    accept_slack is the relative margin by which an agent's realized return
    may exceed the value its quadratic model predicted for the candidate
    trajectory.  Zero would reject ties through floating-point noise; large
    values accept steps the models no longer explain.
    """

    horizon: int
    epsilon: float = 1e-4
    max_iterations: int = 100
    mu_u: float = 1e-6
    mu_b: float = 1e-6
    mu_up: float = 10.0
    mu_down: float = 0.5
    mu_min: float = 1e-9
    mu_max: float = 1e10
    accept_slack: float = 1e-3

    def __post_init__(self):
        if self.horizon < 1:
            raise DimensionMismatchError("horizon must be at least 1")
        if self.epsilon <= 0 or self.max_iterations < 1:
            raise DimensionMismatchError("epsilon and max_iterations must be positive")
        if not (0 < self.mu_down < 1 < self.mu_up):
            raise DimensionMismatchError("need mu_down in (0,1) and mu_up > 1")
        if not (0 < self.mu_min <= self.mu_max):
            raise DimensionMismatchError("need 0 < mu_min <= mu_max")
        if self.accept_slack < 0:
            raise DimensionMismatchError("accept_slack must be nonnegative")


@dataclass
class ValueQuadratic:
    """Quadratic value model around a nominal belief: V + grad^T db + db^T hess db / 2."""

    value: float
    grad: np.ndarray
    hess: np.ndarray


@dataclass
class StageQuadratic:
    """One agent's quadratic action-value model over the stacked s = [b, u]."""

    value: float
    grad: np.ndarray
    hess: np.ndarray
    n_b: int

    @property
    def grad_b(self) -> np.ndarray:
        return self.grad[: self.n_b]

    @property
    def grad_u(self) -> np.ndarray:
        return self.grad[self.n_b :]

    @property
    def hess_bb(self) -> np.ndarray:
        return self.hess[: self.n_b, : self.n_b]

    @property
    def hess_ub(self) -> np.ndarray:
        return self.hess[self.n_b :, : self.n_b]

    @property
    def hess_uu(self) -> np.ndarray:
        return self.hess[self.n_b :, self.n_b :]


@dataclass
class AffinePolicy:
    """Per-stage affine feedback u_k(b) = u_nom[k] + feedforward[k] + gain[k] @ (b - b_nom[k])."""

    b_nom: np.ndarray        # (l + 1, n_b)
    u_nom: np.ndarray        # (l, n_u)
    feedforward: np.ndarray  # (l, n_u)
    gain: np.ndarray         # (l, n_u, n_b)

    @property
    def horizon(self) -> int:
        return self.u_nom.shape[0]

    def control(self, k: int, b_flat: np.ndarray) -> np.ndarray:
        db = np.asarray(b_flat, dtype=float) - self.b_nom[k]
        return self.u_nom[k] + self.feedforward[k] + self.gain[k] @ db


@dataclass
class NashSolution:
    """Converged (or best-so-far) joint policy and its nominal rollout."""

    policy: AffinePolicy
    b_nom: np.ndarray
    u_nom: np.ndarray
    returns: np.ndarray
    iterations: int
    converged: bool
    stationarity_residual: float
    iteration_seconds: list[float] = field(default_factory=list)


def psd_clamp(hess: np.ndarray) -> np.ndarray:
    """Symmetrize a cost Hessian and zero out its negative eigenvalues.

    Cost models enter the backward pass convexified: gradients stay exact, so
    stationary points are unchanged, but the quadratic model majorizes the
    cost along its concave directions (the determinant objective is the
    offender) instead of inviting steps that the forward pass then rejects.
    Works on the nonzero submatrix only since supports keep most rows empty;
    a Cholesky probe skips the eigendecomposition in the usual PSD case.
    """
    H = (hess + hess.T) / 2.0
    live = np.flatnonzero(np.any(H != 0.0, axis=0))
    if live.size == 0:
        return H
    sub = H[np.ix_(live, live)]
    try:
        np.linalg.cholesky(sub + 1e-12 * np.eye(live.size))
        return H
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(sub)
    if w[0] >= 0.0:
        return H
    out = H.copy()
    out[np.ix_(live, live)] = (V * np.maximum(w, 0.0)) @ V.T
    return out


def terminal_value(
    model: GameModel, b_terminal: np.ndarray, agents: Optional[Sequence[int]] = None
) -> list[Optional[ValueQuadratic]]:
    """Quadratize each requested agent's terminal cost at the trajectory endpoint."""
    b_terminal = np.asarray(b_terminal, dtype=float).reshape(-1)
    which = range(model.layout.n_agents) if agents is None else agents
    out: list[Optional[ValueQuadratic]] = [None] * model.layout.n_agents
    for i in which:
        cost = model.terminal_costs[i]

        def fn(B, _c=cost):
            return np.asarray(_c(B), dtype=float)

        sup = model.terminal_support(i)
        try:
            value, grad, hess = numdiff.quadratic_model(fn, b_terminal, batched=True, support=sup)
        except DifferentiationDomainError as err:
            raise NonFiniteCostError(i, "terminal", str(err)) from err
        out[i] = ValueQuadratic(value=value, grad=grad, hess=psd_clamp(hess))
    return out


def expand_stage_quadratics(
    costs: Sequence[Optional[CostQuadratic]],
    dyn: DynamicsLinearization,
    v_next: Sequence[Optional[ValueQuadratic]],
    n_b: int,
) -> list[Optional[StageQuadratic]]:
    """Second-order models of each agent's cost-to-go through noisy dynamics.

    The expectation over transition noise adds, per noise column w with
    Jacobian w_s, a constant w^T V_bb w / 2, a gradient w_s^T V_bb w, and a
    curvature w_s^T V_bb w_s.  These models are unregularized; regularization
    is applied only inside the stage-game solve, never to the value recursion.
    """
    g_s, W, W_s = dyn.g_s, dyn.noise, dyn.noise_s
    # Noise only enters the mean rows of the belief; the covariance rows of W
    # (and hence of its Jacobian) are identically zero, so all W contractions
    # run on the n_x-row slice.
    n_x = W.shape[1]
    W_m = W[:n_x]
    W_s_m = W_s[:, :n_x, :]
    W_s_mT = W_s_m.transpose(0, 2, 1)
    out: list[Optional[StageQuadratic]] = [None] * len(costs)
    for i, (c, v) in enumerate(zip(costs, v_next)):
        if c is None:
            continue
        vb, vbb = v.grad, v.hess
        vbb_m = vbb[:n_x, :n_x]
        P = vbb_m @ W_m
        value = c.value + v.value + 0.5 * float(np.sum(P * W_m))
        grad = c.grad + g_s.T @ vb + np.tensordot(W_s_m, P, axes=([0, 1], [1, 0]))
        hess = (
            c.hess
            + g_s.T @ vbb @ g_s
            + np.sum((W_s_mT @ vbb_m) @ W_s_m, axis=0)
        )
        out[i] = StageQuadratic(value=value, grad=grad, hess=(hess + hess.T) / 2.0, n_b=n_b)
    return out


def regularization_curvature(dyn: DynamicsLinearization) -> np.ndarray:
    """Shared curvature g_s^T g_s + sum_j w_s^(j)T w_s^(j) of the mu_b penalty.

    Scaling this by mu_b and adding it to an agent's stage Hessian is exactly
    the effect of penalizing next-belief deviation (mean and noise channels)
    with mu_b/2 * |db|^2, which is how step damping enters the stage game.
    """
    g_s, W_s = dyn.g_s, dyn.noise_s
    n_x = dyn.noise.shape[1]
    W_s_m = W_s[:, :n_x, :]
    reg = g_s.T @ g_s + np.tensordot(W_s_m, W_s_m, axes=([0, 1], [0, 1]))
    return (reg + reg.T) / 2.0


def solve_stage_game(
    stage_quads: Sequence[Optional[StageQuadratic]],
    reg_ss: np.ndarray,
    mu_u: float,
    mu_b: float,
    layout,
    optimized: Optional[Sequence[int]] = None,
    stage=None,
) -> tuple[np.ndarray, np.ndarray, float]:
    """Simultaneous stationarity solve across agents at one stage.

    Stacks each optimized agent's own-control block row of its quadratic
    model plus the mu_b-scaled shared damping curvature, shifts the
    own-control diagonal by mu_u, and solves for the joint feedforward and
    feedback by LU with partial pivoting.  A relative residual above 1e-8 or
    a singular matrix raises the retryable stage-game error.  Returns
    (feedforward, gain, feedforward residual).
    """
    n_b, n_u = layout.n_b, layout.n_u
    agents = list(range(layout.n_agents)) if optimized is None else list(optimized)
    rows = np.concatenate([layout.control_indices(i) for i in agents])
    m = rows.size
    reg_uu = reg_ss[n_b:, n_b:]
    reg_ub = reg_ss[n_b:, :n_b]

    quu = np.zeros((m, m))
    qub = np.zeros((m, n_b))
    qu = np.zeros(m)
    r0 = 0
    for i in agents:
        q = stage_quads[i]
        own = layout.control_indices(i)
        blk = slice(r0, r0 + own.size)
        quu[blk, :] = q.hess_uu[np.ix_(own, rows)] + mu_b * reg_uu[np.ix_(own, rows)]
        qub[blk, :] = q.hess_ub[own, :] + mu_b * reg_ub[own, :]
        qu[blk] = q.grad_u[own]
        r0 += own.size
    quu[np.diag_indices(m)] += mu_u

    rhs = -np.concatenate([qu[:, None], qub], axis=1)
    try:
        sol = np.linalg.solve(quu, rhs)
    except np.linalg.LinAlgError as err:
        raise StageGameSingularError(stage, "stacked control system is singular") from err
    resid = quu @ sol - rhs
    denom = 1.0 + np.max(np.abs(rhs))
    if not np.all(np.isfinite(sol)) or np.max(np.abs(resid)) > STAGE_RESIDUAL_TOL * denom:
        raise StageGameSingularError(stage, "stacked control solve failed residual check")

    j = np.zeros(n_u)
    gain = np.zeros((n_u, n_b))
    j[rows] = sol[:, 0]
    gain[rows, :] = sol[:, 1:]
    ff_resid = float(np.max(np.abs(quu @ sol[:, 0] + qu)) / (1.0 + np.max(np.abs(qu), initial=0.0)))
    return j, gain, ff_resid


def propagate_value(
    stage_quads: Sequence[Optional[StageQuadratic]],
    j: np.ndarray,
    gain: np.ndarray,
) -> list[Optional[ValueQuadratic]]:
    """Plug the joint affine policy into each agent's stage quadratic."""
    out: list[Optional[ValueQuadratic]] = [None] * len(stage_quads)
    for i, q in enumerate(stage_quads):
        if q is None:
            continue
        quu, qub, qu = q.hess_uu, q.hess_ub, q.grad_u
        value = q.value + qu @ j + 0.5 * j @ quu @ j
        grad = q.grad_b + gain.T @ (quu @ j) + gain.T @ qu + qub.T @ j
        hess = q.hess_bb + gain.T @ quu @ gain + gain.T @ qub + qub.T @ gain
        out[i] = ValueQuadratic(value=float(value), grad=grad, hess=(hess + hess.T) / 2.0)
    return out


@dataclass
class TrajectoryDerivatives:
    """All finite-difference bundles along one nominal trajectory.

    These depend only on the nominals, not on the regularization weights, so
    a solve iterating on mu after a rejected pass reuses them unchanged.
    Stage cost Hessians and terminal values arrive already convexified.
    """

    costs: list          # per stage: per-agent CostQuadratic (or None)
    dyns: list           # per stage: DynamicsLinearization
    regs: list           # per stage: shared mu_b curvature
    terminal: list       # per-agent ValueQuadratic (or None)


def trajectory_derivatives(
    b_nom: np.ndarray,
    u_nom: np.ndarray,
    model: GameModel,
    optimized: Optional[Sequence[int]] = None,
) -> TrajectoryDerivatives:
    """Quadratize costs and linearize dynamics at every stage of a nominal."""
    l = u_nom.shape[0]
    agents = list(range(model.layout.n_agents)) if optimized is None else list(optimized)
    terminal = terminal_value(model, b_nom[l], agents=agents)
    costs: list = [None] * l
    dyns: list = [None] * l
    regs: list = [None] * l
    for k in range(l - 1, -1, -1):
        ck = numdiff.quadratize_costs(model, b_nom[k], u_nom[k], agents=agents, stage=k)
        for i in agents:
            c = ck[i]
            ck[i] = CostQuadratic(value=c.value, grad=c.grad, hess=psd_clamp(c.hess))
        costs[k] = ck
        dyns[k] = numdiff.linearize_belief_dynamics(b_nom[k], u_nom[k], model)
        regs[k] = regularization_curvature(dyns[k])
    return TrajectoryDerivatives(costs=costs, dyns=dyns, regs=regs, terminal=terminal)


def backward_pass(
    b_nom: np.ndarray,
    u_nom: np.ndarray,
    model: GameModel,
    mu_u: float,
    mu_b: float,
    optimized: Optional[Sequence[int]] = None,
    derivs: Optional[TrajectoryDerivatives] = None,
) -> tuple[AffinePolicy, list[Optional[ValueQuadratic]], float, np.ndarray]:
    """One sweep of stage-game solves from the terminal stage to the first.

    Returns the affine policy anchored at the given nominals, the stage-0
    value models, the worst relative feedforward residual encountered, and
    each optimized agent's forecast of its noise-free return under the new
    policy (stage-0 model value minus the accumulated transition-noise
    expectation terms, which a deterministic rollout never pays).
    """
    lay = model.layout
    l = u_nom.shape[0]
    agents = list(range(lay.n_agents)) if optimized is None else list(optimized)
    if derivs is None:
        derivs = trajectory_derivatives(b_nom, u_nom, model, optimized=agents)
    v_next = derivs.terminal
    ffs = np.zeros((l, lay.n_u))
    gains = np.zeros((l, lay.n_u, lay.n_b))
    worst = 0.0
    noise_value = np.zeros(lay.n_agents)
    for k in range(l - 1, -1, -1):
        costs, dyn, reg = derivs.costs[k], derivs.dyns[k], derivs.regs[k]
        quads = expand_stage_quadratics(costs, dyn, v_next, lay.n_b)
        j, gain, resid = solve_stage_game(quads, reg, mu_u, mu_b, lay, optimized=agents, stage=k)
        worst = max(worst, resid)
        ffs[k], gains[k] = j, gain
        n_x = dyn.noise.shape[1]
        W_m = dyn.noise[:n_x]
        for i in agents:
            vbb_m = v_next[i].hess[:n_x, :n_x]
            noise_value[i] += 0.5 * float(np.sum((vbb_m @ W_m) * W_m))
        v_next = propagate_value(quads, j, gain)
        for i in agents:
            v = v_next[i]
            # Cross-agent feedback coupling can reintroduce concavity even
            # with convexified costs, so each propagated value is clamped too.
            v_next[i] = ValueQuadratic(value=v.value, grad=v.grad, hess=psd_clamp(v.hess))
    policy = AffinePolicy(
        b_nom=np.array(b_nom, dtype=float, copy=True),
        u_nom=np.array(u_nom, dtype=float, copy=True),
        feedforward=ffs,
        gain=gains,
    )
    forecast = np.full(lay.n_agents, np.nan)
    for i in agents:
        forecast[i] = v_next[i].value - noise_value[i]
    return policy, v_next, worst, forecast


def rollout(b0_flat: np.ndarray, u_traj: np.ndarray, model: GameModel) -> np.ndarray:
    """Noise-free open-loop belief propagation under a fixed control sequence."""
    l = u_traj.shape[0]
    B = np.zeros((l + 1, model.layout.n_b))
    B[0] = b0_flat
    for k in range(l):
        G, _ = mean_and_noise_batch(model, B[k][None, :], u_traj[k][None, :])
        B[k + 1] = G[0]
    if not np.all(np.isfinite(B)):
        raise ForwardPassDivergedError("open-loop rollout produced non-finite beliefs")
    return B


def forward_pass(
    b0_flat: np.ndarray, policy: AffinePolicy, model: GameModel
) -> tuple[np.ndarray, np.ndarray]:
    """Noise-free closed-loop rollout of an affine policy from b0."""
    l = policy.horizon
    lay = model.layout
    B = np.zeros((l + 1, lay.n_b))
    U = np.zeros((l, lay.n_u))
    B[0] = np.asarray(b0_flat, dtype=float)
    for k in range(l):
        U[k] = policy.control(k, B[k])
        G, _ = mean_and_noise_batch(model, B[k][None, :], U[k][None, :])
        B[k + 1] = G[0]
    if not (np.all(np.isfinite(B)) and np.all(np.isfinite(U))):
        raise ForwardPassDivergedError("closed-loop rollout produced non-finite values")
    return B, U


def evaluate_returns(
    b_traj: np.ndarray, u_traj: np.ndarray, model: GameModel
) -> np.ndarray:
    """Per-agent summed stage costs plus terminal cost along a nominal rollout."""
    lay = model.layout
    out = np.zeros(lay.n_agents)
    for i in range(lay.n_agents):
        stage = np.asarray(model.stage_costs[i](b_traj[:-1], u_traj), dtype=float)
        term = np.asarray(model.terminal_costs[i](b_traj[-1][None, :]), dtype=float)
        out[i] = stage.sum() + term[0]
    return out


def solve(
    b0,
    model: GameModel,
    config: SolverConfig,
    u_init: Optional[np.ndarray] = None,
    optimized_agents: Optional[Sequence[int]] = None,
) -> NashSolution:
    """Run the full solver from an initial belief.

    b0 may be a GaussianBelief or an already-flattened belief vector.  With
    optimized_agents set, only those agents' controls are decision variables;
    the rest hold their initial control sequences (the single-agent planner
    used by the receding-horizon baseline).
    """
    lay = model.layout
    if isinstance(b0, GaussianBelief):
        b0_flat = vec_belief(b0)
    else:
        b0_flat = np.asarray(b0, dtype=float).reshape(-1)
    if b0_flat.shape[0] != lay.n_b:
        raise DimensionMismatchError(f"b0 length {b0_flat.shape[0]} != {lay.n_b}")
    l = config.horizon
    if u_init is None:
        u_nom = np.zeros((l, lay.n_u))
    else:
        u_nom = np.array(u_init, dtype=float, copy=True)
        if u_nom.shape != (l, lay.n_u):
            raise DimensionMismatchError(f"u_init shape {u_nom.shape} != {(l, lay.n_u)}")
    agents = list(range(lay.n_agents)) if optimized_agents is None else list(optimized_agents)

    b_nom = rollout(b0_flat, u_nom, model)
    returns = evaluate_returns(b_nom, u_nom, model)
    policy = AffinePolicy(
        b_nom=b_nom.copy(),
        u_nom=u_nom.copy(),
        feedforward=np.zeros_like(u_nom),
        gain=np.zeros((l, lay.n_u, lay.n_b)),
    )
    mu_u, mu_b = config.mu_u, config.mu_b
    converged = False
    worst_resid = 0.0
    iter_seconds: list[float] = []
    iterations = 0
    at_cap = False
    probing = False
    derivs: Optional[TrajectoryDerivatives] = None

    while iterations < config.max_iterations:
        iterations += 1
        tic = time.perf_counter()
        use_mu_u = config.mu_min if probing else mu_u
        use_mu_b = config.mu_min if probing else mu_b
        try:
            if derivs is None:
                derivs = trajectory_derivatives(b_nom, u_nom, model, optimized=agents)
            new_policy, _, resid, forecast = backward_pass(
                b_nom, u_nom, model, use_mu_u, use_mu_b, optimized=agents, derivs=derivs
            )
            b_new, u_new = forward_pass(b0_flat, new_policy, model)
            returns_new = evaluate_returns(b_new, u_new, model)
            failed = not np.all(np.isfinite(returns_new[agents]))
        except (
            StageGameSingularError,
            ForwardPassDivergedError,
            IllConditionedObservationError,
            NonFiniteCostError,
            DifferentiationDomainError,
        ) as err:
            log.debug("pass rejected: %s", err)
            failed = True
        iter_seconds.append(time.perf_counter() - tic)

        accepted = False
        if not failed:
            delta = float(np.max(np.abs(returns_new[agents] - returns[agents])))
            margin = config.accept_slack * (1.0 + np.abs(forecast[agents]))
            accepted = bool(np.all(returns_new[agents] <= forecast[agents] + margin))
        if accepted:
            log.debug(
                "it=%d accepted delta=%.3e mu_u=%.1e probe=%s",
                iterations, delta, use_mu_u, probing,
            )
            # Fold the realized feedback into the nominals: the affine map is
            # unchanged and the stored rollout becomes exactly self-consistent.
            policy = AffinePolicy(
                b_nom=b_new.copy(),
                u_nom=u_new.copy(),
                feedforward=np.zeros_like(u_new),
                gain=new_policy.gain,
            )
            b_nom, u_nom, returns = b_new, u_new, returns_new
            worst_resid = max(worst_resid, resid)
            at_cap = False
            derivs = None
            if delta <= config.epsilon:
                # A small step under heavy damping is not evidence of a fixed
                # point; require it from an (effectively) unregularized pass.
                if probing or use_mu_u <= config.mu_u:
                    converged = True
                    break
                probing = True
            else:
                probing = False
                mu_u = max(mu_u * config.mu_down, config.mu_min)
                mu_b = max(mu_b * config.mu_down, config.mu_min)
        else:
            log.debug("it=%d rejected mu_u=%.1e probe=%s", iterations, use_mu_u, probing)
            if probing:
                # A failed undamped probe says nothing about the current
                # trust region; resume the damped schedule where it was.
                probing = False
                continue
            if at_cap:
                log.warning("regularization capped at mu_max with repeated rejects; stopping")
                break
            mu_u = min(mu_u * config.mu_up, config.mu_max)
            mu_b = min(mu_b * config.mu_up, config.mu_max)
            at_cap = mu_u >= config.mu_max

    return NashSolution(
        policy=policy,
        b_nom=b_nom,
        u_nom=u_nom,
        returns=returns,
        iterations=iterations,
        converged=converged,
        stationarity_residual=worst_resid,
        iteration_seconds=iter_seconds,
    )
