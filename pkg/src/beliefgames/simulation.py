"""Closed-loop stochastic simulation on top of the planner.

A ground-truth world advances by the scenario dynamics with sampled motion
noise while each agent runs its own EKF on private measurement draws and
replans on a schedule.  Nothing is shared between agents at runtime except
the physics: executed controls are treated as observable, so every filter
predicts with the joint control that was actually applied.

Agent state slices are assumed to start with the planar position (all bundled
scenarios do); collision and track checks read those two components.
"""

from __future__ import annotations

import dataclasses
import enum
import logging
import multiprocessing
import os
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .belief import GameModel, GaussianBelief, ekf_filter_step, vec_belief
from .exceptions import DimensionMismatchError
from .scenarios.track import TrackMap
from .solver import AffinePolicy, NashSolution, SolverConfig, solve

log = logging.getLogger(__name__)


class ControllerKind(enum.Enum):
    """Planner variants benchmarked against each other."""

    DG_BSP = "dg_bsp"          # joint game solve in belief space
    MPC_BSP = "mpc_bsp"        # own controls only; others replay their last action
    DG_NON_BSP = "dg_non_bsp"  # game solve with planner covariances frozen


@dataclass(frozen=True)
class ControllerSpec:
    """Controller kind plus its solver settings and replan schedule."""

    kind: ControllerKind
    config: SolverConfig
    replan_period: int = 1
    warm_start: bool = False

    def __post_init__(self):
        if self.replan_period < 1:
            raise DimensionMismatchError("replan period must be at least 1 step")


@dataclass
class WorldState:
    """Ground truth as the episode loop carries it; advanced only by world_step."""

    x: np.ndarray
    step: int
    rng: np.random.Generator


def world_step(
    x: np.ndarray, u_joint: np.ndarray, model: GameModel, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Advance truth one step and draw each agent's private measurement.

    The motion noise is drawn first, then one observation noise vector per
    agent in agent order, so a fixed seed fixes the whole episode.  Returns
    (x_next, Z) with Z of shape (n_agents, n_z): each row is that agent's own
    noisy view of the full next state.
    """
    lay = model.layout
    x = np.asarray(x, dtype=float).reshape(-1)
    m = rng.standard_normal(lay.n_x)
    x_next = np.asarray(
        model.dynamics(x[None, :], np.asarray(u_joint, dtype=float)[None, :], m[None, :]),
        dtype=float,
    )[0]
    Z = np.zeros((lay.n_agents, lay.n_z))
    for i in range(lay.n_agents):
        noise = rng.standard_normal(lay.n_z)
        Z[i] = np.asarray(model.observation(x_next[None, :], noise[None, :]), dtype=float)[0]
    return x_next, Z


class Controller:
    """Receding-horizon planner for one agent.

    DG_BSP solves the joint game from the agent's belief.  MPC_BSP optimizes
    only the own control channels while every other agent is scripted to
    repeat its last observed control.  DG_NON_BSP solves the game on a model
    whose planning rollout keeps covariances frozen at their current value
    (the online filter is unaffected).
    """

    def __init__(self, spec: ControllerSpec, agent: int, model: GameModel):
        self.spec = spec
        self.agent = agent
        if spec.kind is ControllerKind.DG_NON_BSP:
            self.model = dataclasses.replace(model, freeze_covariance=True)
        else:
            self.model = model
        self._last: Optional[NashSolution] = None

    def plan(self, belief: GaussianBelief, u_prev: np.ndarray) -> AffinePolicy:
        cfg = self.spec.config
        lay = self.model.layout
        l = cfg.horizon
        u_init = np.zeros((l, lay.n_u))
        if self.spec.kind is ControllerKind.MPC_BSP:
            u_init[:] = np.asarray(u_prev, dtype=float)
            u_init[:, lay.control_slice(self.agent)] = 0.0
        if self.spec.warm_start and self._last is not None:
            shift = self.spec.replan_period
            tail = self._last.u_nom[shift:]
            if self.spec.kind is ControllerKind.MPC_BSP:
                # Others stay scripted from u_prev; only the own decision
                # channels carry over.
                own = lay.control_slice(self.agent)
                u_init[: tail.shape[0], own] = tail[:, own]
            else:
                # Shift the whole joint plan.  Re-seeding only the own slice
                # would hand the solver a nominal where every opponent coasts,
                # and the first Nash step (rebuilding their plans from zero)
                # is far outside the quadratic model's trust region.
                u_init[: tail.shape[0]] = tail
                if 0 < tail.shape[0] < l:
                    u_init[tail.shape[0] :] = tail[-1]
        optimized = (self.agent,) if self.spec.kind is ControllerKind.MPC_BSP else None
        sol = solve(vec_belief(belief), self.model, cfg, u_init=u_init, optimized_agents=optimized)
        if not sol.converged:
            log.debug(
                "agent %d %s replan did not converge in %d iterations; using best-so-far",
                self.agent, self.spec.kind.value, sol.iterations,
            )
        self._last = sol
        return sol.policy


@dataclass
class SimTrace:
    """Everything one episode produced, plot-ready.

    Progress is accumulated unwrapped arc length (zeros without a track).
    collision_mask marks steps with any car-car contact; collision_counts
    holds per-agent contact events, counted once per contiguous interval and
    attributed to the agent that was closing faster at first contact.
    """

    states: np.ndarray                 # (n_steps + 1, n_x) truth
    means: np.ndarray                  # (n_agents, n_steps + 1, n_x)
    covs: np.ndarray                   # (n_agents, n_steps + 1, n_x, n_x)
    controls: np.ndarray               # (n_steps, n_u) applied joint controls
    measurements: np.ndarray           # (n_agents, n_steps, n_z)
    progress: np.ndarray               # (n_agents, n_steps + 1) accumulated
    collision_mask: np.ndarray         # (n_steps,) bool
    collision_counts: np.ndarray       # (n_agents,) attributed contact events
    off_track_mask: np.ndarray         # (n_agents, n_steps + 1) bool
    kinds: tuple[str, ...]
    seed: object

    @property
    def n_steps(self) -> int:
        return self.controls.shape[0]

    @property
    def collision_events(self) -> int:
        return int(self.collision_counts.sum())


def _positions(x: np.ndarray, model: GameModel) -> np.ndarray:
    lay = model.layout
    out = np.zeros((lay.n_agents, 2))
    for i in range(lay.n_agents):
        s = lay.state_slice(i)
        out[i] = x[s.start : s.start + 2]
    return out


def _attribute_contact(
    p_prev: np.ndarray, p_now: np.ndarray, pair: tuple[int, int], tau: float
) -> int:
    """Pick the faster-closing agent of a newly touching pair."""
    i, j = pair
    v_i = (p_now[i] - p_prev[i]) / tau
    v_j = (p_now[j] - p_prev[j]) / tau
    d = p_now[j] - p_now[i]
    norm = np.linalg.norm(d)
    if norm < 1e-12:
        return i
    d = d / norm
    closing_i = float(v_i @ d)
    closing_j = float(-(v_j @ d))
    return i if closing_i >= closing_j else j


def run_episode(
    model: GameModel,
    specs: Sequence[ControllerSpec],
    x0: np.ndarray,
    cov0: np.ndarray,
    n_steps: int,
    seed,
    track: Optional[TrackMap] = None,
    footprints: Optional[Sequence[float]] = None,
) -> SimTrace:
    """Simulate one closed-loop episode.

    Each agent starts from the same prior N(x0, cov0), filters its own
    measurement stream, and replans on its spec's schedule; between replans
    it evaluates its affine policy on its current belief.  With a track,
    per-agent progress accumulates seam-safe arc-length deltas and the
    off-track mask compares centerline distance to the track half width.
    """
    lay = model.layout
    if len(specs) != lay.n_agents:
        raise DimensionMismatchError("need exactly one controller spec per agent")
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.shape[0] != lay.n_x:
        raise DimensionMismatchError(f"x0 length {x0.shape[0]} != {lay.n_x}")

    controllers = [Controller(s, i, model) for i, s in enumerate(specs)]
    beliefs = [GaussianBelief(x0.copy(), np.array(cov0, dtype=float)) for _ in specs]
    world = WorldState(x=x0.copy(), step=0, rng=np.random.default_rng(seed))

    n_a = lay.n_agents
    states = np.zeros((n_steps + 1, lay.n_x))
    means = np.zeros((n_a, n_steps + 1, lay.n_x))
    covs = np.zeros((n_a, n_steps + 1, lay.n_x, lay.n_x))
    controls = np.zeros((n_steps, lay.n_u))
    measurements = np.zeros((n_a, n_steps, lay.n_z))
    progress = np.zeros((n_a, n_steps + 1))
    collision_mask = np.zeros(n_steps, dtype=bool)
    collision_counts = np.zeros(n_a, dtype=int)
    off_track = np.zeros((n_a, n_steps + 1), dtype=bool)

    states[0] = world.x
    for i in range(n_a):
        means[i, 0] = beliefs[i].mean
        covs[i, 0] = beliefs[i].cov

    sums = None
    if footprints is not None:
        fp = np.asarray(footprints, dtype=float)
        sums = fp[:, None] + fp[None, :]
    if track is not None:
        p = _positions(world.x, model)
        off_track[:, 0] = track.distance(p) > track.half_width

    policies: list[Optional[AffinePolicy]] = [None] * n_a
    plan_step = [0] * n_a
    u_prev = np.zeros(lay.n_u)
    in_contact = False

    for t in range(n_steps):
        for i, spec in enumerate(specs):
            if policies[i] is None or (t - plan_step[i]) >= spec.replan_period:
                policies[i] = controllers[i].plan(beliefs[i], u_prev)
                plan_step[i] = t
        u = np.zeros(lay.n_u)
        for i in range(n_a):
            k = min(t - plan_step[i], policies[i].horizon - 1)
            own = lay.control_slice(i)
            u[own] = policies[i].control(k, vec_belief(beliefs[i]))[own]
        controls[t] = u

        p_prev = _positions(world.x, model)
        x_next, Z = world_step(world.x, u, model, world.rng)
        for i in range(n_a):
            beliefs[i] = ekf_filter_step(beliefs[i], u, Z[i], model)
            measurements[i, t] = Z[i]
            means[i, t + 1] = beliefs[i].mean
            covs[i, t + 1] = beliefs[i].cov

        p_now = _positions(x_next, model)
        if sums is not None and n_a > 1:
            dist = np.linalg.norm(p_now[:, None, :] - p_now[None, :, :], axis=2)
            iu = np.triu_indices(n_a, k=1)
            touching = dist[iu] < sums[iu]
            collision_mask[t] = bool(touching.any())
            if collision_mask[t] and not in_contact:
                for a, b, hit in zip(iu[0], iu[1], touching):
                    if hit:
                        who = _attribute_contact(p_prev, p_now, (int(a), int(b)), model.tau)
                        collision_counts[who] += 1
            in_contact = collision_mask[t]
        if track is not None:
            off_track[:, t + 1] = track.distance(p_now) > track.half_width
            r_prev = track.progress(p_prev)
            r_now = track.progress(p_now)
            progress[:, t + 1] = progress[:, t] + track.centered_delta(r_now, r_prev)

        world.x = x_next
        world.step = t + 1
        states[t + 1] = x_next
        u_prev = u

    return SimTrace(
        states=states,
        means=means,
        covs=covs,
        controls=controls,
        measurements=measurements,
        progress=progress,
        collision_mask=collision_mask,
        collision_counts=collision_counts,
        off_track_mask=off_track,
        kinds=tuple(s.kind.value for s in specs),
        seed=seed,
    )


@dataclass
class RaceStats:
    """Aggregate outcome of a seeded two-car tournament.

    The fast car is agent 0 by convention (the model's first car carries the
    lower drag).  Leads are fast-minus-slow final progress; the histogram
    uses fixed-width bins anchored at zero.
    """

    n_races: int
    n_steps: int
    kinds: tuple[str, str]
    base_seed: int
    wins_fast: int
    wins_slow: int
    ties: int
    leads: np.ndarray
    lead_bin: float
    hist_edges: np.ndarray
    hist_counts: np.ndarray
    collisions_fast: int
    collisions_slow: int

    @property
    def win_fraction_fast(self) -> float:
        return self.wins_fast / self.n_races

    def to_payload(self) -> dict:
        """JSON-ready dict; deterministic for fixed inputs, no timestamps."""
        return {
            "schema_version": 1,
            "n_races": self.n_races,
            "n_steps": self.n_steps,
            "controller_fast": self.kinds[0],
            "controller_slow": self.kinds[1],
            "base_seed": self.base_seed,
            "wins_fast": self.wins_fast,
            "wins_slow": self.wins_slow,
            "ties": self.ties,
            "win_fraction_fast": self.win_fraction_fast,
            "lead_mean": float(np.mean(self.leads)),
            "lead_bin": self.lead_bin,
            "hist_edges": [float(e) for e in self.hist_edges],
            "hist_counts": [int(c) for c in self.hist_counts],
            "collisions_fast": self.collisions_fast,
            "collisions_slow": self.collisions_slow,
        }


_RACE_CTX: dict = {}


def _run_one_race(r: int) -> tuple[np.ndarray, np.ndarray]:
    # Race r owns the stream seeded base_seed + r: the start jitter draws
    # first, then a derived episode seed, so worker scheduling cannot matter.
    ctx = _RACE_CTX
    rng = np.random.default_rng(ctx["base_seed"] + r)
    x0 = ctx["sampler"](rng)
    trace = run_episode(
        ctx["model"],
        ctx["specs"],
        x0,
        ctx["cov0"],
        ctx["n_steps"],
        seed=int(rng.integers(np.iinfo(np.int64).max)),
        track=ctx["track"],
        footprints=ctx["footprints"],
    )
    return trace.progress[:, -1], trace.collision_counts


def run_tournament(
    model: GameModel,
    fast_spec: ControllerSpec,
    slow_spec: ControllerSpec,
    sampler: Callable[[np.random.Generator], np.ndarray],
    cov0: np.ndarray,
    track: TrackMap,
    footprints: Sequence[float],
    n_races: int,
    n_steps: int,
    base_seed: int,
    lead_bin: float = 1.0,
    jobs: int = 1,
) -> RaceStats:
    """Run seeded paired races and aggregate wins, leads, and collisions.

    Race r derives all of its randomness from (base_seed, r), so results are
    independent of the number of worker processes; workers return in index
    order and the reduction is a plain left-to-right accumulation.
    """
    if n_races < 1:
        raise DimensionMismatchError("n_races must be at least 1")
    specs = (fast_spec, slow_spec)
    ctx = {
        "model": model,
        "specs": specs,
        "sampler": sampler,
        "cov0": np.array(cov0, dtype=float),
        "track": track,
        "footprints": tuple(footprints),
        "n_steps": n_steps,
        "base_seed": int(base_seed),
    }
    global _RACE_CTX
    _RACE_CTX = ctx
    if jobs == 0:
        jobs = os.cpu_count() or 1
    if jobs > 1 and n_races > 1:
        # Children inherit the context via fork; only race indices travel.
        mp = multiprocessing.get_context("fork")
        with mp.Pool(processes=min(jobs, n_races)) as pool:
            results = pool.map(_run_one_race, range(n_races))
    else:
        results = [_run_one_race(r) for r in range(n_races)]

    leads = np.zeros(n_races)
    wins_fast = wins_slow = ties = 0
    coll = np.zeros(2, dtype=int)
    for r, (final_progress, counts) in enumerate(results):
        leads[r] = final_progress[0] - final_progress[1]
        if leads[r] > 0:
            wins_fast += 1
        elif leads[r] < 0:
            wins_slow += 1
        else:
            ties += 1
        coll += counts

    lo = np.floor(leads.min() / lead_bin) * lead_bin
    hi = np.ceil(leads.max() / lead_bin) * lead_bin
    if hi <= lo:
        hi = lo + lead_bin
    edges = np.arange(lo, hi + lead_bin / 2, lead_bin)
    counts, _ = np.histogram(leads, bins=edges)
    return RaceStats(
        n_races=n_races,
        n_steps=n_steps,
        kinds=(fast_spec.kind.value, slow_spec.kind.value),
        base_seed=int(base_seed),
        wins_fast=wins_fast,
        wins_slow=wins_slow,
        ties=ties,
        leads=leads,
        lead_bin=lead_bin,
        hist_edges=edges,
        hist_counts=counts,
        collisions_fast=int(coll[0]),
        collisions_slow=int(coll[1]),
    )
