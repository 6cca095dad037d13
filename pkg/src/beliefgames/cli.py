"""Command-line front end: solve, episode, race, and bench runs from JSON configs.

Every command is deterministic under a fixed (config, seed) pair.  Exit codes:
0 on success, 1 on runtime failure, 2 on config errors.  The only environment
overrides are BELIEFGAMES_OUT (output directory) and BELIEFGAMES_JOBS (worker
count for tournaments); everything else lives in the config file.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import os
import sys
import time
from pathlib import Path
from typing import Optional

import numpy as np

from . import reports
from .exceptions import ConfigError
from .scenarios import loader
from .simulation import ControllerKind, ControllerSpec, run_episode, run_tournament
from .solver import SolverConfig, solve

log = logging.getLogger(__name__)


def _out_dir(args) -> Path:
    env = os.environ.get("BELIEFGAMES_OUT")
    out = Path(args.out if args.out is not None else (env if env else "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _jobs_override(default: int) -> int:
    env = os.environ.get("BELIEFGAMES_JOBS")
    if env is None:
        return default
    try:
        jobs = int(env)
    except ValueError:
        raise ConfigError(f"BELIEFGAMES_JOBS must be an integer, found {env!r}") from None
    if jobs < 0:
        raise ConfigError("BELIEFGAMES_JOBS must be nonnegative")
    return jobs


def _seed(args, cfg: dict, default: int = 0) -> int:
    if args.seed is not None:
        return args.seed
    value = cfg.get("seed", default)
    if isinstance(value, bool) or not isinstance(value, int) or value < 0:
        raise ConfigError("'seed' must be a nonnegative integer")
    return value


def _controller_spec(kind_name: str, config: SolverConfig, replan_period: int,
                     warm_start: bool) -> ControllerSpec:
    return ControllerSpec(
        kind=ControllerKind(loader.normalize_kind(kind_name)),
        config=config,
        replan_period=replan_period,
        warm_start=warm_start,
    )


def cmd_solve(args) -> int:
    cfg = loader.parse_config_file(args.config)
    scenario = loader.build_scenario(cfg)
    config = loader.solver_config(cfg)
    out = _out_dir(args)

    x0 = scenario.x0
    if args.seed is not None and scenario.start_sampler is not None:
        x0 = scenario.start_sampler(np.random.default_rng(args.seed))
    from .belief import GaussianBelief

    sol = solve(GaussianBelief(x0, scenario.cov0), scenario.model, config)
    traj_path, sol_path = reports.write_solution_files(out, sol, scenario.model.layout)
    fig_path = reports.fig_plan(out / "plan.png", sol, scenario.model.layout, scenario.track)
    for i, r in enumerate(sol.returns):
        print(f"agent {i} return: {r:.6f}")
    print(f"iterations: {sol.iterations}  converged: {sol.converged}")
    print(f"wrote {traj_path}, {sol_path}, {fig_path}")
    return 0


def cmd_episode(args) -> int:
    cfg = loader.parse_config_file(args.config)
    scenario = loader.build_scenario(cfg)
    config = loader.solver_config(cfg, section="simulation")
    sim = loader.sim_settings(cfg, scenario.n_agents)
    n_steps = args.steps if args.steps is not None else sim.n_steps
    seed = _seed(args, cfg)
    out = _out_dir(args)

    specs = tuple(
        _controller_spec(kind, config, sim.replan_period, sim.warm_start)
        for kind in sim.controllers
    )
    trace = run_episode(
        scenario.model, specs, scenario.x0, scenario.cov0, n_steps, seed,
        track=scenario.track, footprints=scenario.footprint_radii,
    )
    lay = scenario.model.layout
    csv_path = reports.write_trace_csv(out / "trace.csv", trace, lay)
    json_path = reports.write_json(out / "episode_summary.json", reports.trace_summary(trace, lay))
    figs = [
        reports.fig_trajectories(out / "trajectories.png", trace, lay, scenario.track),
        reports.fig_estimates(out / "estimates.png", trace, lay),
    ]
    summary = reports.trace_summary(trace, lay)
    print(f"episode: {n_steps} steps, seed {seed}")
    print(f"final progress: {summary['final_progress']}")
    print(f"collision events: {summary['collision_events']}")
    print(f"wrote {csv_path}, {json_path}, {', '.join(str(f) for f in figs)}")
    return 0


def cmd_race(args) -> int:
    cfg = loader.parse_config_file(args.config)
    scenario = loader.build_scenario(cfg)
    config = loader.solver_config(cfg, section="race")
    race = loader.race_settings(cfg)
    if scenario.start_sampler is None or scenario.track is None:
        raise ConfigError("'race' needs a scenario with a track and a start sampler (racing)")
    if scenario.n_agents != 2:
        raise ConfigError("'race' runs two-car tournaments; configure exactly 2 cars")

    n_races = args.races if args.races is not None else race.n_races
    n_steps = args.steps if args.steps is not None else race.n_steps
    fast_kind = args.controller_fast if args.controller_fast else race.controller_fast
    slow_kind = args.controller_slow if args.controller_slow else race.controller_slow
    base_seed = _seed(args, cfg)
    jobs = _jobs_override(race.jobs)
    out = _out_dir(args)

    fast = _controller_spec(fast_kind, config, race.replan_period, race.warm_start)
    slow = _controller_spec(slow_kind, config, race.replan_period, race.warm_start)
    stats = run_tournament(
        scenario.model, fast, slow, scenario.start_sampler, scenario.cov0,
        scenario.track, scenario.footprint_radii, n_races, n_steps, base_seed,
        lead_bin=race.lead_bin, jobs=jobs,
    )
    stats_path, hist_path = reports.write_race_files(out, stats)
    fig_path = reports.fig_lead_histogram(out / "lead_histogram.png", stats)
    print(
        f"{stats.kinds[0]} vs {stats.kinds[1]}: fast wins {stats.wins_fast}/{stats.n_races} "
        f"({100.0 * stats.win_fraction_fast:.1f}%), collisions "
        f"fast={stats.collisions_fast} slow={stats.collisions_slow}"
    )
    print(f"wrote {stats_path}, {hist_path}, {fig_path}")
    return 0


def bench_report(cfg: dict, scenario, repeats: int = 10) -> dict:
    """Time single full iterations and an until-convergence solve at l and 2l."""
    from .belief import GaussianBelief

    base = loader.solver_config(cfg, section="bench")
    b0 = GaussianBelief(scenario.x0, scenario.cov0)
    entries = []
    for horizon in (base.horizon, 2 * base.horizon):
        full = loader.solver_config(cfg, horizon=horizon, section="bench")
        one_it = dataclasses.replace(full, max_iterations=1)
        samples = []
        for _ in range(repeats):
            sol = solve(b0, scenario.model, one_it)
            samples.append(sol.iteration_seconds[0])
        samples_ms = 1e3 * np.asarray(samples)

        tic = time.perf_counter()
        sol = solve(b0, scenario.model, full)
        conv_s = time.perf_counter() - tic
        entries.append(
            {
                "horizon": horizon,
                "per_iteration_ms": {
                    "mean": float(samples_ms.mean()),
                    "stddev": float(samples_ms.std()),
                    "samples": repeats,
                },
                "to_convergence_s": conv_s,
                "iterations": sol.iterations,
                "converged": sol.converged,
            }
        )
    return {
        "schema_version": reports.SCHEMA_VERSION,
        "scenario": scenario.name,
        "horizons": entries,
        "per_iteration_ratio": entries[1]["per_iteration_ms"]["mean"]
        / entries[0]["per_iteration_ms"]["mean"],
    }


def cmd_bench(args) -> int:
    cfg = loader.parse_config_file(args.config)
    scenario = loader.build_scenario(cfg)
    out = _out_dir(args)
    report = bench_report(cfg, scenario)
    json_path = reports.write_json(out / "bench.json", report)
    fig_path = reports.fig_bench(out / "bench.png", report)
    for e in report["horizons"]:
        print(
            f"horizon {e['horizon']}: per-iteration "
            f"{e['per_iteration_ms']['mean']:.1f} ms (stddev {e['per_iteration_ms']['stddev']:.1f}), "
            f"until convergence {e['to_convergence_s']:.2f} s in {e['iterations']} iterations"
        )
    print(f"doubling ratio: {report['per_iteration_ratio']:.2f}")
    print(f"wrote {json_path}, {fig_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="beliefgames",
        description="Trajectory games in belief space: solves, episodes, tournaments, timing.",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", required=True, help="JSON run config")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--out", default=None, help="output directory (default: out)")

    p_solve = sub.add_parser("solve", help="one trajectory-game solve")
    common(p_solve)
    p_solve.set_defaults(fn=cmd_solve)

    p_episode = sub.add_parser("episode", help="one closed-loop episode")
    common(p_episode)
    p_episode.add_argument("--steps", type=int, default=None, help="episode length")
    p_episode.set_defaults(fn=cmd_episode)

    p_race = sub.add_parser("race", help="seeded two-car tournament")
    common(p_race)
    p_race.add_argument("--races", type=int, default=None, help="number of races")
    p_race.add_argument("--steps", type=int, default=None, help="steps per race")
    p_race.add_argument("--controller-fast", default=None, help="fast car controller kind")
    p_race.add_argument("--controller-slow", default=None, help="slow car controller kind")
    p_race.set_defaults(fn=cmd_race)

    p_bench = sub.add_parser("bench", help="horizon-scaling timing report")
    common(p_bench)
    p_bench.set_defaults(fn=cmd_bench)

    return parser


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.fn(args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except Exception as err:  # runtime failures exit 1 by contract
        log.debug("runtime failure", exc_info=True)
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
