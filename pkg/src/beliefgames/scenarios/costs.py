"""Shared cost ingredients: chance margins, soft barriers, covariance reads."""

from __future__ import annotations

import numpy as np

from ..belief import JointLayout

# Sharpness of the smoothed maximum eigenvalue inside chance_bound.
EIG_SHARPNESS = 20.0


def cov_flat_indices(layout: JointLayout, coords) -> np.ndarray:
    """Flat belief indices of the covariance block over the given state coords.

    Includes both mirror entries of each off-diagonal pair so that cost
    support sets stay consistent with symmetrized covariance reads.
    """
    coords = np.asarray(coords, dtype=int)
    idx = [layout.cov_flat_index(r, c) for r in coords for c in coords]
    return np.unique(np.asarray(idx, dtype=int))


def read_cov_block(B: np.ndarray, layout: JointLayout, coords) -> np.ndarray:
    """Symmetrized covariance sub-blocks (K, c, c) from flat beliefs (K, n_b)."""
    coords = np.asarray(coords, dtype=int)
    n = layout.n_x
    cols = np.array([[layout.cov_flat_index(r, c) for c in coords] for r in coords])
    block = B[:, cols.reshape(-1)].reshape(-1, coords.size, coords.size)
    colsT = np.array([[layout.cov_flat_index(c, r) for c in coords] for r in coords])
    blockT = B[:, colsT.reshape(-1)].reshape(-1, coords.size, coords.size)
    return (block + blockT) / 2.0


def chance_bound(cov_xy: np.ndarray, sharpness: float = EIG_SHARPNESS) -> np.ndarray:
    """Twice the square root of a smoothed largest eigenvalue of 2x2 covariances.

    The two eigenvalues are combined by a log-sum-exp shifted so the result is
    exact when they coincide and approaches the true maximum when they
    separate; the smoothed eigenvalue is clamped at zero before the root.
    Accepts (2, 2) or (K, 2, 2); returns a scalar or (K,).
    """
    cov = np.asarray(cov_xy, dtype=float)
    single = cov.ndim == 2
    if single:
        cov = cov[None, :, :]
    a = cov[:, 0, 0]
    d = cov[:, 1, 1]
    c = (cov[:, 0, 1] + cov[:, 1, 0]) / 2.0
    mean = (a + d) / 2.0
    root = np.sqrt(((a - d) / 2.0) ** 2 + c**2)
    # (1/k) log(2 cosh(k r)) - log(2)/k, written in overflow-safe form; this is
    # smooth in the covariance entries because cosh(k sqrt(t)) is analytic in t.
    soft = mean + root + (np.log1p(np.exp(-2.0 * sharpness * root)) - np.log(2.0)) / sharpness
    alpha = 2.0 * np.sqrt(np.maximum(soft, 0.0))
    return alpha[0] if single else alpha


def soft_penalty(slack, weight: float, sharpness: float):
    """Exponential barrier weight * exp(-sharpness * slack) for soft constraints.

    The exponent is capped so that line-search probes deep inside the
    infeasible region stay finite; such iterates are astronomically expensive
    either way and get rejected on cost.
    """
    arg = -sharpness * np.asarray(slack, dtype=float)
    return weight * np.exp(np.minimum(arg, 300.0))


def det2(cov: np.ndarray) -> np.ndarray:
    """Determinant of 2x2 covariance blocks (K, 2, 2) with symmetrized reads."""
    c = (cov[..., 0, 1] + cov[..., 1, 0]) / 2.0
    return cov[..., 0, 0] * cov[..., 1, 1] - c**2
