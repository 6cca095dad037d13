"""File outputs for solves, episodes, races, and benchmarks.

Delimited data (CSV time series, JSON summaries) is written with stable key
order and repr-exact floats so identical runs produce identical bytes; no
payload carries a timestamp.  Figures are rendered with the Agg backend next
to the data they illustrate.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Optional, Sequence

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from matplotlib.patches import Ellipse

from .belief import JointLayout
from .scenarios.track import TrackMap
from .simulation import RaceStats, SimTrace
from .solver import NashSolution

SCHEMA_VERSION = 1

AGENT_COLORS = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple")


def write_json(path, payload: dict) -> Path:
    """Serialize a payload with sorted keys and a trailing newline."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _fmt(value) -> str:
    return repr(float(value))


def write_trace_csv(path, trace: SimTrace, layout: JointLayout) -> Path:
    """One row per step per agent: truth, own estimate, variances, own controls.

    The belief columns hold the agent's estimate of the full joint state; the
    control columns hold only the agent's own applied slice (empty on the
    final row, which has no applied control).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_x = layout.n_x
    n_ui = layout.control_slice(0).stop - layout.control_slice(0).start
    header = (
        ["step", "agent"]
        + [f"x_{j}" for j in range(n_x)]
        + [f"est_{j}" for j in range(n_x)]
        + [f"var_{j}" for j in range(n_x)]
        + [f"u_{j}" for j in range(n_ui)]
        + ["progress"]
    )
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for t in range(trace.n_steps + 1):
            for i in range(layout.n_agents):
                own = layout.control_slice(i)
                if t < trace.n_steps:
                    u_cols = [_fmt(v) for v in trace.controls[t, own]]
                else:
                    u_cols = [""] * n_ui
                writer.writerow(
                    [t, i]
                    + [_fmt(v) for v in trace.states[t]]
                    + [_fmt(v) for v in trace.means[i, t]]
                    + [_fmt(v) for v in np.diag(trace.covs[i, t])]
                    + u_cols
                    + [_fmt(trace.progress[i, t])]
                )
    return path


def trace_summary(trace: SimTrace, layout: JointLayout) -> dict:
    """Outcome flags and closing statistics of one episode."""
    est_err = [
        float(np.linalg.norm(trace.means[i, -1] - trace.states[-1]))
        for i in range(layout.n_agents)
    ]
    return {
        "schema_version": SCHEMA_VERSION,
        "controllers": list(trace.kinds),
        "seed": trace.seed if isinstance(trace.seed, int) else str(trace.seed),
        "n_steps": trace.n_steps,
        "collision_events": trace.collision_events,
        "collision_counts": [int(c) for c in trace.collision_counts],
        "collision_steps": int(trace.collision_mask.sum()),
        "off_track_fraction": [float(m) for m in trace.off_track_mask.mean(axis=1)],
        "final_progress": [float(p) for p in trace.progress[:, -1]],
        "final_estimate_error": est_err,
        "final_cov_trace": [float(np.trace(trace.covs[i, -1])) for i in range(layout.n_agents)],
    }


def write_race_files(out_dir, stats: RaceStats) -> tuple[Path, Path]:
    """RaceStats as a JSON payload plus a histogram-bin CSV."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stats_path = write_json(out_dir / "race_stats.json", stats.to_payload())
    hist_path = out_dir / "lead_histogram.csv"
    with open(hist_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["bin_lo", "bin_hi", "count"])
        for lo, hi, c in zip(stats.hist_edges[:-1], stats.hist_edges[1:], stats.hist_counts):
            writer.writerow([_fmt(lo), _fmt(hi), int(c)])
    return stats_path, hist_path


def write_solution_files(out_dir, sol: NashSolution, layout: JointLayout) -> tuple[Path, Path]:
    """Nominal trajectory CSV plus a JSON bundle with the affine policy."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    traj_path = out_dir / "trajectory.csv"
    n_b, n_u = layout.n_b, layout.n_u
    with open(traj_path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["stage"] + [f"b_{j}" for j in range(n_b)] + [f"u_{j}" for j in range(n_u)]
        )
        horizon = sol.u_nom.shape[0]
        for k in range(horizon + 1):
            u_cols = [_fmt(v) for v in sol.u_nom[k]] if k < horizon else [""] * n_u
            writer.writerow([k] + [_fmt(v) for v in sol.b_nom[k]] + u_cols)
    payload = {
        "schema_version": SCHEMA_VERSION,
        "converged": sol.converged,
        "iterations": sol.iterations,
        "stationarity_residual": sol.stationarity_residual,
        "returns": [float(r) for r in sol.returns],
        "feedforward": sol.policy.feedforward.tolist(),
        "gains": sol.policy.gain.tolist(),
    }
    sol_path = write_json(out_dir / "solution.json", payload)
    return traj_path, sol_path


def _draw_track(ax, track: TrackMap) -> None:
    ny, nx = track.d_grid.shape
    xs = track.origin[0] + track.cell * np.arange(nx)
    ys = track.origin[1] + track.cell * np.arange(ny)
    ax.contour(
        xs, ys, track.d_grid, levels=[track.half_width], colors="dimgray", linewidths=1.0
    )
    ax.plot(
        track.centerline[:, 0], track.centerline[:, 1],
        color="lightgray", linestyle="--", linewidth=0.8, zorder=0,
    )


def _cov_ellipse(ax, mean2: np.ndarray, cov2: np.ndarray, color: str) -> None:
    w, V = np.linalg.eigh((cov2 + cov2.T) / 2.0)
    w = np.maximum(w, 0.0)
    # 2-sigma contour; eigh returns ascending order, so the major axis is last.
    angle = float(np.degrees(np.arctan2(V[1, 1], V[0, 1])))
    ell = Ellipse(
        xy=mean2, width=4.0 * np.sqrt(w[1]), height=4.0 * np.sqrt(w[0]),
        angle=angle, facecolor="none", edgecolor=color, alpha=0.45, linewidth=0.8,
    )
    ax.add_patch(ell)


def fig_trajectories(
    path,
    trace: SimTrace,
    layout: JointLayout,
    track: Optional[TrackMap] = None,
    ellipse_every: int = 5,
) -> Path:
    """Top-down view: truth (solid), estimate (dashed), covariance ellipses."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7.0, 5.5))
    if track is not None:
        _draw_track(ax, track)
    for i in range(layout.n_agents):
        color = AGENT_COLORS[i % len(AGENT_COLORS)]
        s = layout.state_slice(i).start
        ax.plot(
            trace.states[:, s], trace.states[:, s + 1],
            color=color, linewidth=1.4, label=f"agent {i} truth",
        )
        ax.plot(
            trace.means[i, :, s], trace.means[i, :, s + 1],
            color=color, linewidth=1.0, linestyle="--", label=f"agent {i} estimate",
        )
        for t in range(0, trace.n_steps + 1, max(1, ellipse_every)):
            _cov_ellipse(
                ax, trace.means[i, t, s : s + 2],
                trace.covs[i, t, s : s + 2, s : s + 2], color,
            )
        ax.plot(trace.states[0, s], trace.states[0, s + 1], marker="o", color=color)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(fontsize=8, loc="best")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def fig_estimates(path, trace: SimTrace, layout: JointLayout) -> Path:
    """Per-agent own-position truth vs estimate with 2-sigma bands over time."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n_a = layout.n_agents
    fig, axes = plt.subplots(n_a, 2, figsize=(9.0, 2.6 * n_a), squeeze=False)
    ts = np.arange(trace.n_steps + 1)
    for i in range(n_a):
        s = layout.state_slice(i).start
        for c in range(2):
            ax = axes[i][c]
            truth = trace.states[:, s + c]
            est = trace.means[i, :, s + c]
            sig = np.sqrt(np.maximum(trace.covs[i, :, s + c, s + c], 0.0))
            ax.plot(ts, truth, color="black", linewidth=1.0, label="truth")
            ax.plot(ts, est, color=AGENT_COLORS[i % len(AGENT_COLORS)],
                    linewidth=1.0, linestyle="--", label="estimate")
            ax.fill_between(ts, est - 2 * sig, est + 2 * sig,
                            color=AGENT_COLORS[i % len(AGENT_COLORS)], alpha=0.15)
            ax.set_ylabel(f"agent {i} {'xy'[c]} [m]")
            if i == 0 and c == 0:
                ax.legend(fontsize=8)
    axes[-1][0].set_xlabel("step")
    axes[-1][1].set_xlabel("step")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def fig_plan(path, sol: NashSolution, layout: JointLayout, track: Optional[TrackMap] = None,
             ellipse_every: int = 2) -> Path:
    """Planned nominal means with planned covariance ellipses."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(7.0, 5.5))
    if track is not None:
        _draw_track(ax, track)
    n_x = layout.n_x
    for i in range(layout.n_agents):
        color = AGENT_COLORS[i % len(AGENT_COLORS)]
        s = layout.state_slice(i).start
        means = sol.b_nom[:, s : s + 2]
        ax.plot(means[:, 0], means[:, 1], color=color, linewidth=1.4,
                marker=".", markersize=3, label=f"agent {i} plan")
        for k in range(0, sol.b_nom.shape[0], max(1, ellipse_every)):
            cov = sol.b_nom[k, n_x:].reshape(n_x, n_x, order="F")
            _cov_ellipse(ax, means[k], cov[s : s + 2, s : s + 2], color)
    ax.set_aspect("equal", adjustable="datalim")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.legend(fontsize=8, loc="best")
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def fig_lead_histogram(path, stats: RaceStats) -> Path:
    """Distribution of fast-minus-slow final arc-length leads."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6.5, 4.0))
    ax.bar(
        stats.hist_edges[:-1], stats.hist_counts, width=stats.lead_bin,
        align="edge", color="tab:blue", edgecolor="white",
    )
    ax.axvline(0.0, color="black", linewidth=1.0)
    ax.set_xlabel("lead of fast agent [m]")
    ax.set_ylabel("races")
    ax.set_title(
        f"{stats.kinds[0]} vs {stats.kinds[1]}: "
        f"fast wins {stats.wins_fast}/{stats.n_races}"
    )
    fig.savefig(path, dpi=120, bbox_inches="tight")
    plt.close(fig)
    return path


def fig_bench(path, report: dict) -> Path:
    """Per-iteration and until-convergence timing across horizons."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    entries = report["horizons"]
    labels = [str(e["horizon"]) for e in entries]
    xs = np.arange(len(entries))
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9.0, 4.0))
    ax1.bar(
        xs, [e["per_iteration_ms"]["mean"] for e in entries],
        yerr=[e["per_iteration_ms"]["stddev"] for e in entries],
        color="tab:blue", capsize=4,
    )
    ax1.set_xticks(xs, labels)
    ax1.set_xlabel("horizon")
    ax1.set_ylabel("per-iteration [ms]")
    ax2.bar(xs, [e["to_convergence_s"] for e in entries], color="tab:orange")
    ax2.set_xticks(xs, labels)
    ax2.set_xlabel("horizon")
    ax2.set_ylabel("until convergence [s]")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
