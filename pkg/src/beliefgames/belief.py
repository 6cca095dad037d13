"""Gaussian beliefs over a joint multi-agent state and their EKF dynamics.

A belief is a Gaussian N(mean, cov) over the stacked state of all agents.
The flat belief vector used by the planner is

    b = [mean, vec(cov)]          (length n_x + n_x**2)

with vec() in column-major order.  Propagating a belief through one step of
an extended Kalman filter gives stochastic belief dynamics

    b' = g(b, u) + W(b, u) @ xi,      xi ~ N(0, I_{n_x})

where g carries the predicted mean and the deterministic covariance update,
and W injects the mean jitter caused by the not-yet-seen measurement.

All model callables (dynamics, observation, costs) are vectorized over a
leading batch axis; the finite-difference layers rely on that to evaluate
whole stencils in single calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .exceptions import DimensionMismatchError, IllConditionedObservationError

# Relative step for the Jacobians used inside the EKF terms.
JACOBIAN_STEP = 1e-4

# Tolerated covariance asymmetry / negative-eigenvalue slack on inputs.
SYMMETRY_TOL = 1e-6
EIGENVALUE_TOL = -1e-9


@dataclass(frozen=True)
class JointLayout:
    """Per-agent dimensions of the stacked state/control/measurement vectors."""

    state_dims: tuple[int, ...]
    control_dims: tuple[int, ...]
    measurement_dims: tuple[int, ...]

    def __post_init__(self):
        dims = (self.state_dims, self.control_dims, self.measurement_dims)
        if not all(len(d) == len(self.state_dims) for d in dims):
            raise DimensionMismatchError("per-agent dimension tuples differ in length")
        if len(self.state_dims) == 0:
            raise DimensionMismatchError("layout needs at least one agent")
        for d in dims:
            if any(int(v) <= 0 for v in d):
                raise DimensionMismatchError("all per-agent dimensions must be positive")
        object.__setattr__(self, "state_dims", tuple(int(v) for v in self.state_dims))
        object.__setattr__(self, "control_dims", tuple(int(v) for v in self.control_dims))
        object.__setattr__(self, "measurement_dims", tuple(int(v) for v in self.measurement_dims))

    @property
    def n_agents(self) -> int:
        return len(self.state_dims)

    @property
    def n_x(self) -> int:
        return sum(self.state_dims)

    @property
    def n_u(self) -> int:
        return sum(self.control_dims)

    @property
    def n_z(self) -> int:
        return sum(self.measurement_dims)

    @property
    def n_b(self) -> int:
        """Flat belief length: mean plus column-major covariance."""
        return self.n_x + self.n_x * self.n_x

    @property
    def n_s(self) -> int:
        """Stacked (belief, control) length used by quadratizations."""
        return self.n_b + self.n_u

    def _offset(self, dims: tuple[int, ...], i: int) -> int:
        if not 0 <= i < self.n_agents:
            raise DimensionMismatchError(f"agent index {i} out of range")
        return sum(dims[:i])

    def state_slice(self, i: int) -> slice:
        off = self._offset(self.state_dims, i)
        return slice(off, off + self.state_dims[i])

    def control_slice(self, i: int) -> slice:
        off = self._offset(self.control_dims, i)
        return slice(off, off + self.control_dims[i])

    def measurement_slice(self, i: int) -> slice:
        off = self._offset(self.measurement_dims, i)
        return slice(off, off + self.measurement_dims[i])

    def control_indices(self, i: int) -> np.ndarray:
        s = self.control_slice(i)
        return np.arange(s.start, s.stop)

    def cov_flat_index(self, row: int, col: int) -> int:
        """Index of covariance entry (row, col) inside the flat belief vector."""
        n = self.n_x
        if not (0 <= row < n and 0 <= col < n):
            raise DimensionMismatchError("covariance index out of range")
        return n + col * n + row


@dataclass(frozen=True)
class GaussianBelief:
    """Joint Gaussian state estimate.

    The covariance is re-symmetrized on construction; gross asymmetry or
    eigenvalues below -1e-9 are rejected.
    """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float).reshape(-1)
        cov = np.asarray(self.cov, dtype=float)
        n = mean.shape[0]
        if cov.shape != (n, n):
            raise DimensionMismatchError(
                f"covariance shape {cov.shape} does not match mean length {n}"
            )
        asym = np.max(np.abs(cov - cov.T)) if n else 0.0
        if asym > SYMMETRY_TOL:
            raise DimensionMismatchError(f"covariance asymmetry {asym:.3e} exceeds {SYMMETRY_TOL}")
        cov = (cov + cov.T) / 2.0
        w = np.linalg.eigvalsh(cov)
        if w.min(initial=0.0) < EIGENVALUE_TOL:
            raise DimensionMismatchError(f"covariance has eigenvalue {w.min():.3e} below tolerance")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def n_x(self) -> int:
        return self.mean.shape[0]


@dataclass(frozen=True)
class GameModel:
    """Game ingredients over a joint layout.

    Callable contract (all vectorized over a leading batch axis):
      dynamics(x, u, m) -> next state, with motion noise m of length n_x;
      observation(x, n) -> measurement, with noise n of length n_z;
      stage_costs[i](b, u) -> scalar per row, b the flat belief vector;
      terminal_costs[i](b) -> scalar per row.

    Optional support tuples list the flat (b, u) coordinates each cost can
    depend on; quadratization restricts its stencils to that set.  With
    freeze_covariance set, the planner's belief rollout keeps the covariance
    block fixed and carries no transition noise (mean dynamics still apply).
    """

    layout: JointLayout
    dynamics: Callable[..., np.ndarray]
    observation: Callable[..., np.ndarray]
    stage_costs: tuple[Callable[..., np.ndarray], ...]
    terminal_costs: tuple[Callable[..., np.ndarray], ...]
    tau: float
    stage_cost_support: Optional[tuple[Optional[np.ndarray], ...]] = None
    terminal_cost_support: Optional[tuple[Optional[np.ndarray], ...]] = None
    freeze_covariance: bool = False

    def __post_init__(self):
        n = self.layout.n_agents
        if len(self.stage_costs) != n or len(self.terminal_costs) != n:
            raise DimensionMismatchError("need one stage and one terminal cost per agent")
        if self.tau <= 0:
            raise DimensionMismatchError("tau must be positive")

    def stage_support(self, i: int) -> Optional[np.ndarray]:
        if self.stage_cost_support is None:
            return None
        return self.stage_cost_support[i]

    def terminal_support(self, i: int) -> Optional[np.ndarray]:
        if self.terminal_cost_support is None:
            return None
        return self.terminal_cost_support[i]


def vec_belief(b: GaussianBelief) -> np.ndarray:
    """Flatten a belief to [mean, vec(cov)] with column-major vec."""
    return np.concatenate([b.mean, b.cov.flatten(order="F")])


def unvec_belief(v: np.ndarray) -> GaussianBelief:
    """Rebuild a GaussianBelief from a flat vector; n_x is inferred.

    The covariance block is re-symmetrized, making unvec(vec(b)) exact.
    """
    v = np.asarray(v, dtype=float).reshape(-1)
    n_b = v.shape[0]
    n = int((math.isqrt(1 + 4 * n_b) - 1) // 2)
    if n + n * n != n_b:
        raise DimensionMismatchError(f"flat length {n_b} is not n + n**2 for integer n")
    mean = v[:n]
    cov = v[n:].reshape(n, n, order="F")
    return GaussianBelief(mean, (cov + cov.T) / 2.0)


def split_flat(B: np.ndarray, n_x: int) -> tuple[np.ndarray, np.ndarray]:
    """Split flat beliefs (K, n_b) into means (K, n_x) and symmetrized covs (K, n_x, n_x)."""
    B = np.atleast_2d(B)
    x = B[:, :n_x]
    # Row-major reshape of a column-major vec gives the transpose; symmetrizing
    # removes the distinction and keeps finite differences well defined when a
    # single off-diagonal coordinate is perturbed.
    St = B[:, n_x:].reshape(B.shape[0], n_x, n_x)
    S = (St + St.transpose(0, 2, 1)) / 2.0
    return x, S


def join_flat(x: np.ndarray, S: np.ndarray) -> np.ndarray:
    """Inverse of split_flat: pack means and covariances column-major."""
    K = x.shape[0]
    return np.concatenate([x, S.transpose(0, 2, 1).reshape(K, -1)], axis=1)


def _sym(A: np.ndarray) -> np.ndarray:
    return (A + A.swapaxes(-1, -2)) / 2.0


def _clamp_psd(A: np.ndarray) -> np.ndarray:
    """Clamp negative eigenvalues of symmetric matrices at zero.

    The common all-PSD case is detected with a Cholesky probe so the
    eigendecomposition only runs when a repair is actually needed.
    """
    A = _sym(A)
    try:
        np.linalg.cholesky(A + 1e-300 * np.eye(A.shape[-1]))
        return A
    except np.linalg.LinAlgError:
        pass
    w, V = np.linalg.eigh(A)
    w = np.maximum(w, 0.0)
    return _sym(np.einsum("...ij,...j,...kj->...ik", V, w, V))


def _psd_sqrt(A: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root; negative eigenvalues are clamped to zero."""
    w, V = np.linalg.eigh(_sym(A))
    w = np.sqrt(np.maximum(w, 0.0))
    return _sym(np.einsum("...ij,...j,...kj->...ik", V, w, V))


def _jac_steps(X: np.ndarray) -> np.ndarray:
    return JACOBIAN_STEP * np.maximum(1.0, np.abs(X))


def _batched_ekf(model: GameModel, x: np.ndarray, S: np.ndarray, u: np.ndarray) -> dict:
    """EKF terms for a batch of beliefs.

    Jacobians A = df/dx, M = df/dm at (x, u, 0) and H = dh/dx, N = dh/dn at
    (f(x, u, 0), 0) are central differences with per-coordinate steps
    1e-4 * max(1, |coord|), evaluated in two vectorized model calls.
    """
    lay = model.layout
    K, n = x.shape
    n_z = lay.n_z
    f, h = model.dynamics, model.observation
    eye_x = np.eye(n)

    # Jacobians depend on (x, u) only, and batches from the outer belief
    # linearization repeat the same (x, u) for every covariance-coordinate
    # perturbation, so the stencils run once per distinct pair.
    xu = np.concatenate([x, u], axis=1)
    uniq, inv = np.unique(xu, axis=0, return_inverse=True)
    inv = np.asarray(inv).reshape(-1)
    xr, ur = uniq[:, :n], uniq[:, n:]
    Ku = xr.shape[0]

    # One dynamics call covers the nominal, the A stencil, and the M stencil.
    hx = _jac_steps(xr)                                   # (Ku, n)
    Xp = xr[:, None, :] + hx[:, :, None] * eye_x          # (Ku, n, n)
    Xm = xr[:, None, :] - hx[:, :, None] * eye_x
    hm = JACOBIAN_STEP                                    # noise nominal is 0
    Mp = hm * eye_x
    rows_x = np.concatenate(
        [xr, Xp.reshape(-1, n), Xm.reshape(-1, n), np.repeat(xr, 2 * n, axis=0)], axis=0
    )
    rows_u = np.concatenate(
        [ur, np.repeat(ur, n, axis=0), np.repeat(ur, n, axis=0), np.repeat(ur, 2 * n, axis=0)],
        axis=0,
    )
    m_stencil = np.concatenate([Mp, -Mp], axis=0)         # (2n, n)
    rows_m = np.concatenate(
        [np.zeros((Ku * (1 + 2 * n), n)), np.tile(m_stencil, (Ku, 1))], axis=0
    )
    F = np.asarray(f(rows_x, rows_u, rows_m), dtype=float)
    x_pred_u = F[:Ku]
    Fp = F[Ku : Ku + Ku * n].reshape(Ku, n, n)
    Fm = F[Ku + Ku * n : Ku + 2 * Ku * n].reshape(Ku, n, n)
    A_u = ((Fp - Fm) / (2.0 * hx[:, :, None])).transpose(0, 2, 1)
    Gm = F[Ku + 2 * Ku * n :].reshape(Ku, 2 * n, n)
    M_u = ((Gm[:, :n] - Gm[:, n:]) / (2.0 * hm)).transpose(0, 2, 1)

    # One observation call covers the H and N stencils.
    hz = _jac_steps(x_pred_u)
    Zp = x_pred_u[:, None, :] + hz[:, :, None] * eye_x
    Zm = x_pred_u[:, None, :] - hz[:, :, None] * eye_x
    eye_z = np.eye(n_z)
    n_stencil = np.concatenate([hm * eye_z, -hm * eye_z], axis=0)
    rows_x2 = np.concatenate(
        [Zp.reshape(-1, n), Zm.reshape(-1, n), np.repeat(x_pred_u, 2 * n_z, axis=0)], axis=0
    )
    rows_n2 = np.concatenate(
        [np.zeros((2 * Ku * n, n_z)), np.tile(n_stencil, (Ku, 1))], axis=0
    )
    Z = np.asarray(h(rows_x2, rows_n2), dtype=float)
    Hp = Z[: Ku * n].reshape(Ku, n, n_z)
    Hm = Z[Ku * n : 2 * Ku * n].reshape(Ku, n, n_z)
    H_u = ((Hp - Hm) / (2.0 * hz[:, :, None])).transpose(0, 2, 1)
    Nn = Z[2 * Ku * n :].reshape(Ku, 2 * n_z, n_z)
    N_u = ((Nn[:, :n_z] - Nn[:, n_z:]) / (2.0 * hm)).transpose(0, 2, 1)

    x_pred = x_pred_u[inv]
    A = A_u[inv]
    M = M_u[inv]
    H = H_u[inv]
    N = N_u[inv]
    MMt = (M_u @ M_u.transpose(0, 2, 1))[inv]
    gamma = _sym(A @ S @ A.transpose(0, 2, 1) + MMt)
    HG = H @ gamma                                        # (K, n_z, n)
    s_innov = _sym(HG @ H.transpose(0, 2, 1) + N @ N.transpose(0, 2, 1))
    try:
        kal = np.linalg.solve(s_innov, HG).transpose(0, 2, 1)   # (K, n, n_z)
    except np.linalg.LinAlgError as err:
        raise IllConditionedObservationError(
            "innovation covariance is singular; observation model is ill conditioned"
        ) from err
    info_gain = _sym(kal @ HG)                            # K_kal @ H @ Gamma
    return {
        "x_pred": x_pred,
        "A": A,
        "M": M,
        "H": H,
        "N": N,
        "gamma": gamma,
        "kalman": kal,
        "info_gain": info_gain,
    }


def mean_and_noise_batch(
    model: GameModel, B: np.ndarray, U: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic belief update g and noise matrix W for a batch.

    Returns (G, W) with G of shape (K, n_b) and W of shape (K, n_b, n_x).
    The covariance rows of W are zero: measurement realizations shift the
    next mean but not the next covariance.
    """
    lay = model.layout
    n = lay.n_x
    B = np.atleast_2d(np.asarray(B, dtype=float))
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if B.shape[1] != lay.n_b or U.shape[1] != lay.n_u:
        raise DimensionMismatchError(
            f"expected belief length {lay.n_b} and control length {lay.n_u}, "
            f"got {B.shape[1]} and {U.shape[1]}"
        )
    K = B.shape[0]
    x, S = split_flat(B, n)
    if model.freeze_covariance:
        x_pred = np.asarray(model.dynamics(x, U, np.zeros((K, n))), dtype=float)
        G = np.concatenate([x_pred, B[:, n:]], axis=1)
        return G, np.zeros((K, lay.n_b, n))
    # Covariance symmetrization maps transposed-coordinate perturbations to
    # the same belief, so linearization batches carry duplicate rows; the EKF
    # and the matrix square root run once per distinct (x, S, u).
    key = np.concatenate([x, S.reshape(K, -1), U], axis=1)
    uniq, inv = np.unique(key, axis=0, return_inverse=True)
    inv = np.asarray(inv).reshape(-1)
    xr = uniq[:, :n]
    Sr = uniq[:, n : n + n * n].reshape(-1, n, n)
    Ur = uniq[:, n + n * n :]
    terms = _batched_ekf(model, xr, Sr, Ur)
    cov_next = _clamp_psd(terms["gamma"] - terms["info_gain"])
    G = join_flat(terms["x_pred"], cov_next)[inv]
    W = np.zeros((K, lay.n_b, n))
    W[:, :n, :] = _psd_sqrt(terms["info_gain"])[inv]
    return G, W


def ekf_terms(b: GaussianBelief, u: np.ndarray, model: GameModel) -> dict:
    """EKF linearization terms {A, M, H, N, gamma, kalman} at a single belief."""
    u = np.asarray(u, dtype=float).reshape(-1)
    t = _batched_ekf(model, b.mean[None, :], b.cov[None, :, :], u[None, :])
    return {k: t[k][0] for k in ("A", "M", "H", "N", "gamma", "kalman")}


def belief_mean_dynamics(b: np.ndarray, u: np.ndarray, model: GameModel) -> np.ndarray:
    """g(b, u): predicted mean and deterministic covariance update, flat."""
    G, _ = mean_and_noise_batch(model, b, u)
    return G[0]


def belief_noise_matrix(b: np.ndarray, u: np.ndarray, model: GameModel) -> np.ndarray:
    """W(b, u): flat-belief noise matrix of shape (n_b, n_x)."""
    _, W = mean_and_noise_batch(model, b, u)
    return W[0]


def sample_belief_transition(
    b: np.ndarray, u: np.ndarray, model: GameModel, rng: np.random.Generator
) -> np.ndarray:
    """One stochastic belief transition b' = g(b, u) + W(b, u) @ xi."""
    G, W = mean_and_noise_batch(model, b, u)
    xi = rng.standard_normal(model.layout.n_x)
    return G[0] + W[0] @ xi


def ekf_filter_step(
    b: GaussianBelief, u: np.ndarray, z: np.ndarray, model: GameModel
) -> GaussianBelief:
    """Condition a belief on an actual measurement z taken after applying u."""
    lay = model.layout
    z = np.asarray(z, dtype=float).reshape(-1)
    if z.shape[0] != lay.n_z:
        raise DimensionMismatchError(f"measurement length {z.shape[0]} != {lay.n_z}")
    u = np.asarray(u, dtype=float).reshape(-1)
    t = _batched_ekf(model, b.mean[None, :], b.cov[None, :, :], u[None, :])
    x_pred = t["x_pred"][0]
    z_pred = np.asarray(
        model.observation(x_pred[None, :], np.zeros((1, lay.n_z))), dtype=float
    )[0]
    mean = x_pred + t["kalman"][0] @ (z - z_pred)
    cov = _clamp_psd(t["gamma"][0] - t["info_gain"][0])
    return GaussianBelief(mean, cov)
