"""Central finite differences and the derivative bundles the solver consumes.

Step sizes follow a fixed per-coordinate rule: 1e-4 * max(1, |x_j|) for first
derivatives and 1e-3 * max(1, |x_j|) for second derivatives.  Functions built
for the planner (dynamics, costs) accept batches, so a whole stencil is one
call; plain Python callables are supported through a row loop.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import DifferentiationDomainError, DimensionMismatchError, NonFiniteCostError

JACOBIAN_STEP = 1e-4
HESSIAN_STEP = 1e-3


def _steps(x0: np.ndarray, rel: float, h) -> np.ndarray:
    if h is None:
        return rel * np.maximum(1.0, np.abs(x0))
    h = np.asarray(h, dtype=float)
    if h.ndim == 0:
        return np.full(x0.shape, float(h))
    if h.shape != x0.shape:
        raise DimensionMismatchError("step array shape does not match x0")
    return h


def _eval_rows(fn: Callable, X: np.ndarray, batched: bool) -> np.ndarray:
    if batched:
        out = np.asarray(fn(X), dtype=float)
    else:
        out = np.asarray([fn(row) for row in X], dtype=float)
    if not np.all(np.isfinite(out)):
        raise DifferentiationDomainError("function returned non-finite values in stencil")
    return out


def jacobian_central(fn: Callable, x0, h=None, *, batched: bool = False) -> np.ndarray:
    """Jacobian of fn at x0 by central differences; scalar fn gives a row."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    n = x0.shape[0]
    hs = _steps(x0, JACOBIAN_STEP, h)
    E = np.eye(n)
    pts = np.concatenate([x0 + hs[:, None] * E, x0 - hs[:, None] * E], axis=0)
    vals = _eval_rows(fn, pts, batched)
    vals = vals.reshape(2 * n, -1)
    J = (vals[:n] - vals[n:]) / (2.0 * hs[:, None])
    return J.T


def gradient_central(
    fn: Callable, x0, h=None, *, batched: bool = False, support: Optional[np.ndarray] = None
) -> np.ndarray:
    """Gradient of a scalar function; off-support entries are exactly zero."""
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    n = x0.shape[0]
    idx = np.arange(n) if support is None else np.asarray(support, dtype=int)
    hs = _steps(x0, JACOBIAN_STEP, h)[idx]
    pts = np.repeat(x0[None, :], 2 * idx.size, axis=0)
    pts[np.arange(idx.size), idx] += hs
    pts[idx.size + np.arange(idx.size), idx] -= hs
    vals = _eval_rows(fn, pts, batched).reshape(-1)
    g = np.zeros(n)
    g[idx] = (vals[: idx.size] - vals[idx.size :]) / (2.0 * hs)
    return g


def hessian_central(
    fn: Callable, x0, h=None, *, batched: bool = False, support: Optional[np.ndarray] = None
) -> np.ndarray:
    """Hessian of a scalar function by central differences, exactly symmetric.

    Diagonal entries use (f(x+h) - 2 f(x) + f(x-h)) / h^2; off-diagonal
    entries the four-point cross stencil.  With a support index set, only
    those rows/columns are populated.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    n = x0.shape[0]
    idx = np.arange(n) if support is None else np.asarray(support, dtype=int)
    k = idx.size
    hs = _steps(x0, HESSIAN_STEP, h)[idx]

    pts = [x0[None, :]]
    pd = np.repeat(x0[None, :], 2 * k, axis=0)
    pd[np.arange(k), idx] += hs
    pd[k + np.arange(k), idx] -= hs
    pts.append(pd)
    iu, ju = np.triu_indices(k, 1)
    if iu.size:
        cross = np.repeat(x0[None, :], 4 * iu.size, axis=0)
        si, sj = hs[iu], hs[ju]
        r = np.arange(iu.size)
        cross[4 * r + 0, idx[iu]] += si
        cross[4 * r + 0, idx[ju]] += sj
        cross[4 * r + 1, idx[iu]] += si
        cross[4 * r + 1, idx[ju]] -= sj
        cross[4 * r + 2, idx[iu]] -= si
        cross[4 * r + 2, idx[ju]] += sj
        cross[4 * r + 3, idx[iu]] -= si
        cross[4 * r + 3, idx[ju]] -= sj
        pts.append(cross)
    vals = _eval_rows(fn, np.concatenate(pts, axis=0), batched).reshape(-1)

    f0 = vals[0]
    H = np.zeros((n, n))
    fp, fm = vals[1 : 1 + k], vals[1 + k : 1 + 2 * k]
    H[idx, idx] = (fp - 2.0 * f0 + fm) / hs**2
    if iu.size:
        fc = vals[1 + 2 * k :].reshape(-1, 4)
        hij = (fc[:, 0] - fc[:, 1] - fc[:, 2] + fc[:, 3]) / (4.0 * hs[iu] * hs[ju])
        H[idx[iu], idx[ju]] = hij
        H[idx[ju], idx[iu]] = hij
    return (H + H.T) / 2.0


def quadratic_model(
    fn: Callable, x0, *, batched: bool = False, support: Optional[np.ndarray] = None
) -> tuple[float, np.ndarray, np.ndarray]:
    """Value, gradient, and Hessian of a scalar function from one stencil.

    Point-for-point identical to gradient_central plus hessian_central;
    bundling the stencils lets a batched function evaluate everything in a
    single call.
    """
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    n = x0.shape[0]
    idx = np.arange(n) if support is None else np.asarray(support, dtype=int)
    k = idx.size
    hg = _steps(x0, JACOBIAN_STEP, None)[idx]
    hh = _steps(x0, HESSIAN_STEP, None)[idx]

    pts = [x0[None, :]]
    pg = np.repeat(x0[None, :], 2 * k, axis=0)
    pg[np.arange(k), idx] += hg
    pg[k + np.arange(k), idx] -= hg
    pts.append(pg)
    pd = np.repeat(x0[None, :], 2 * k, axis=0)
    pd[np.arange(k), idx] += hh
    pd[k + np.arange(k), idx] -= hh
    pts.append(pd)
    iu, ju = np.triu_indices(k, 1)
    if iu.size:
        cross = np.repeat(x0[None, :], 4 * iu.size, axis=0)
        si, sj = hh[iu], hh[ju]
        r = np.arange(iu.size)
        cross[4 * r + 0, idx[iu]] += si
        cross[4 * r + 0, idx[ju]] += sj
        cross[4 * r + 1, idx[iu]] += si
        cross[4 * r + 1, idx[ju]] -= sj
        cross[4 * r + 2, idx[iu]] -= si
        cross[4 * r + 2, idx[ju]] += sj
        cross[4 * r + 3, idx[iu]] -= si
        cross[4 * r + 3, idx[ju]] -= sj
        pts.append(cross)
    vals = _eval_rows(fn, np.concatenate(pts, axis=0), batched).reshape(-1)

    f0 = vals[0]
    g = np.zeros(n)
    g[idx] = (vals[1 : 1 + k] - vals[1 + k : 1 + 2 * k]) / (2.0 * hg)
    H = np.zeros((n, n))
    fp, fm = vals[1 + 2 * k : 1 + 3 * k], vals[1 + 3 * k : 1 + 4 * k]
    H[idx, idx] = (fp - 2.0 * f0 + fm) / hh**2
    if iu.size:
        fc = vals[1 + 4 * k :].reshape(-1, 4)
        hij = (fc[:, 0] - fc[:, 1] - fc[:, 2] + fc[:, 3]) / (4.0 * hh[iu] * hh[ju])
        H[idx[iu], idx[ju]] = hij
        H[idx[ju], idx[iu]] = hij
    return float(f0), g, (H + H.T) / 2.0


@dataclass
class CostQuadratic:
    """Second-order cost model at a stacked point s = [b, u]."""

    value: float
    grad: np.ndarray
    hess: np.ndarray


@dataclass
class DynamicsLinearization:
    """First-order belief dynamics data at a stacked nominal point.

    g0       g at the nominal, flat belief of length n_b
    g_s      (n_b, n_s) Jacobian of g w.r.t. s = [b, u]
    noise    (n_b, n_x) noise matrix W at the nominal
    noise_s  (n_x, n_b, n_s) Jacobian of each noise column w.r.t. s
    """

    g0: np.ndarray
    g_s: np.ndarray
    noise: np.ndarray
    noise_s: np.ndarray


def linearize_belief_dynamics(b_nom, u_nom, model) -> DynamicsLinearization:
    """Linearize g and every column of W around (b_nom, u_nom) in one sweep."""
    from .belief import mean_and_noise_batch

    lay = model.layout
    b_nom = np.asarray(b_nom, dtype=float).reshape(-1)
    u_nom = np.asarray(u_nom, dtype=float).reshape(-1)
    s0 = np.concatenate([b_nom, u_nom])
    n_s, n_b, n_x = lay.n_s, lay.n_b, lay.n_x
    hs = _steps(s0, JACOBIAN_STEP, None)
    E = np.eye(n_s)
    pts = np.concatenate([s0[None, :], s0 + hs[:, None] * E, s0 - hs[:, None] * E], axis=0)
    G, W = mean_and_noise_batch(model, pts[:, :n_b], pts[:, n_b:])
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(W))):
        raise DifferentiationDomainError("belief dynamics returned non-finite values")
    g_s = (G[1 : 1 + n_s] - G[1 + n_s :]).T / (2.0 * hs)
    noise_s = np.einsum(
        "sbj->jbs", (W[1 : 1 + n_s] - W[1 + n_s :]) / (2.0 * hs[:, None, None])
    )
    return DynamicsLinearization(g0=G[0], g_s=g_s, noise=W[0], noise_s=noise_s)


def quadratize_costs(
    model, b_nom, u_nom, *, agents: Optional[Sequence[int]] = None, stage=None
) -> list[Optional[CostQuadratic]]:
    """Per-agent quadratic stage-cost models at (b_nom, u_nom).

    Returns a list indexed by agent; agents outside the requested subset get
    None.  Cost support declarations on the model restrict the stencils.
    """
    lay = model.layout
    s0 = np.concatenate(
        [np.asarray(b_nom, dtype=float).reshape(-1), np.asarray(u_nom, dtype=float).reshape(-1)]
    )
    n_b = lay.n_b
    which = range(lay.n_agents) if agents is None else agents
    out: list[Optional[CostQuadratic]] = [None] * lay.n_agents
    for i in which:
        cost = model.stage_costs[i]

        def fn(S, _c=cost):
            return np.asarray(_c(S[:, :n_b], S[:, n_b:]), dtype=float)

        sup = model.stage_support(i)
        try:
            value, grad, hess = quadratic_model(fn, s0, batched=True, support=sup)
        except DifferentiationDomainError as err:
            raise NonFiniteCostError(i, stage, str(err)) from err
        out[i] = CostQuadratic(value=value, grad=grad, hess=hess)
    return out
