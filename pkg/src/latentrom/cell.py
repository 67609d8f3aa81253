"""Discrete forward dynamics of the latent model.

The stable cell is the linearized implicit midpoint step: with
``M = I - (D + S)/2 - R J(x) R^T / 4`` one step reads

    y      = M^{-1} (2 z + R f(x))
    z_next = y - z
    x_next = x + R^T y / 2 + R^T z0

(``z + z_next = y``). A forward-Euler cell and a Newton-solved
non-linearized midpoint integrator serve as baselines/references.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
from scipy.linalg import lapack

from .errors import NewtonDiverged, NonFiniteState, SingularStep
from .model_core import ForceField, ModelParams

STATE_LIMIT = 1e12
RCOND_MIN = 1e-13

# Instrumentation: number of LU factorizations performed by this module.
factorization_count = 0


@dataclass(frozen=True)
class CellState:
    z: np.ndarray
    x: np.ndarray
    step_index: int = 0


@dataclass
class StepRecord:
    lu: Optional[tuple]
    f_value: np.ndarray
    jac_value: Optional[np.ndarray]
    state_in: CellState
    state_out: CellState
    y: Optional[np.ndarray] = None

    def solve(self, b, trans: int = 0) -> np.ndarray:
        return sla.lu_solve(self.lu, b, trans=trans, check_finite=False)


@dataclass
class RolloutCache:
    initial: CellState
    records: list = field(default_factory=list)
    cell: str = "midpoint-stable"
    mask: Optional[np.ndarray] = None

    def __len__(self):
        return len(self.records)


def assemble_M(params: ModelParams, jac_xi) -> np.ndarray:
    R = params.R
    M = -0.5 * (np.diag(params.D) + params.S) - 0.25 * (R @ np.asarray(jac_xi) @ R.T)
    M[np.diag_indices_from(M)] += 1.0
    return M


def factor(M, step_index=None):
    """LU-factor ``M``; raise :class:`SingularStep` when it is (near) singular."""
    global factorization_count
    factorization_count += 1
    if not np.all(np.isfinite(M)):
        raise NonFiniteState("M has non-finite entries", step_index)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(M, check_finite=False)
    anorm = np.abs(M).sum(axis=0).max()
    rcond, info = lapack.dgecon(lu, anorm, norm="1")
    if info != 0 or not rcond > RCOND_MIN:
        raise SingularStep(f"M is singular or nearly so (rcond={rcond:.3e}); "
                           "stability preconditions D<=0, S=-S^T, J_f<=0 are violated", step_index)
    return lu, piv


def _like(v, ref):
    """Broadcast a vector against a state that may be a column batch."""
    return v[:, None] if np.ndim(ref) == 2 else v


def _check_finite(z, x, step_index):
    if not (np.all(np.isfinite(z)) and np.all(np.isfinite(x))):
        raise NonFiniteState("state became non-finite", step_index)
    big = max(np.abs(z).max(initial=0.0), np.abs(x).max(initial=0.0))
    if big > STATE_LIMIT:
        raise NonFiniteState(f"state magnitude {big:.3e} exceeds {STATE_LIMIT:.0e}", step_index)


def step_midpoint_linearized(params: ModelParams, force: ForceField, state: CellState):
    """One step of the stable cell. Returns ``(next_state, record)``."""
    z, x = state.z, state.x
    fx = force.f(x)
    J = force.jac(x)
    lu = factor(assemble_M(params, J), state.step_index)
    y = sla.lu_solve(lu, 2.0 * z + params.R @ fx, check_finite=False)
    z_next = y - z
    x_next = x + 0.5 * (params.R.T @ y)
    if params.z0 is not None:
        x_next = x_next + _like(params.R.T @ params.z0, x)
    _check_finite(z_next, x_next, state.step_index + 1)
    out = CellState(z_next, x_next, state.step_index + 1)
    return out, StepRecord(lu, fx, J, state, out, y)


def step_euler(params: ModelParams, force: ForceField, state: CellState, _record: bool = False):
    """Forward-Euler cell: ``z' = z + (D+S) z + R f(x)``, ``x' = x + R^T (z + z0)``."""
    z, x = state.z, state.x
    fx = force.f(x)
    z_next = z + _like(params.D, z) * z + params.S @ z + params.R @ fx
    zz = z if params.z0 is None else z + _like(params.z0, z)
    x_next = x + params.R.T @ zz
    _check_finite(z_next, x_next, state.step_index + 1)
    out = CellState(z_next, x_next, state.step_index + 1)
    if _record:
        return out, StepRecord(None, fx, None, state, out)
    return out


def step(params: ModelParams, force: ForceField, state: CellState):
    """Dispatch on ``params.cell``; always returns ``(next_state, record)``."""
    if params.cell == "euler":
        return step_euler(params, force, state, _record=True)
    return step_midpoint_linearized(params, force, state)


def initial_state(params: ModelParams, x0, z_init=None) -> CellState:
    """Initial state; a 2-D ``x0`` of shape ``(l, S)`` starts a column batch.

    Batches are only meaningful for forces that act column-wise, i.e.
    linear forces.
    """
    x0 = np.array(x0, dtype=float)
    if x0.ndim != 2:
        x0 = x0.reshape(-1)
    if x0.shape[0] != params.l:
        raise ValueError(f"x0 has {x0.shape[0]} entries, model expects l={params.l}")
    if z_init is None:
        z_init = params.z_init if params.z_init is not None else np.zeros(params.p)
    z_init = np.array(z_init, dtype=float).reshape(-1)
    if z_init.size != params.p:
        raise ValueError(f"z_init has {z_init.size} entries, model expects p={params.p}")
    if x0.ndim == 2:
        z_init = np.repeat(z_init[:, None], x0.shape[1], axis=1)
    return CellState(z_init, x0, 0)


def rollout(params: ModelParams, force: ForceField, x0, z_init=None, n_steps: int = 0):
    """Run the cell ``n_steps`` times from ``(z_init, x0)``.

    Returns the produced states (initial state excluded) and a cache of
    every step record for the reverse pass.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    state = initial_state(params, x0, z_init)
    cache = RolloutCache(state, cell=params.cell)
    states = []
    for _ in range(n_steps):
        state, rec = step(params, force, state)
        cache.records.append(rec)
        states.append(state)
    return states, cache


def predict(params: ModelParams, force: ForceField, x0, n_steps: int, z_init=None) -> np.ndarray:
    """Observed trajectory as an ``(n_steps + 1, l)`` array, initial row included."""
    state = initial_state(params, x0, z_init)
    out = np.empty((n_steps + 1,) + state.x.shape)
    out[0] = state.x
    for i in range(n_steps):
        state, _ = step(params, force, state)
        out[i + 1] = state.x
    return out


def step_midpoint_full(params: ModelParams, force: ForceField, state: CellState,
                       max_iter: int = 50, tol: float = 1e-12) -> CellState:
    """Non-linearized implicit midpoint step solved by Newton iteration.

    Solves ``z' = z + (D+S)(z+z')/2 + R f((x+x')/2)`` and
    ``x' = x + R^T (z+z')/2 (+ R^T z0)``. Reference only. With ``z0`` the
    force midpoint includes the drift, which the linearized cell leaves
    out, so the two agree exactly only without ``z0`` (linear force).
    """
    p = params.p
    A = np.diag(params.D) + params.S
    R = params.R
    z, x = state.z, state.x
    drift = R.T @ params.z0 if params.z0 is not None else 0.0
    try:
        guess, _ = step_midpoint_linearized(params, force, state)
        zn, xn = guess.z, guess.x
    except SingularStep:
        zn, xn = z, x

    def residual(zn, xn):
        m = 0.5 * (x + xn)
        rz = zn - z - 0.5 * A @ (z + zn) - R @ force.f(m)
        rx = xn - x - 0.5 * R.T @ (z + zn) - drift
        return np.concatenate([rz, rx]), m

    scale = 1.0 + max(np.abs(z).max(initial=0.0), np.abs(x).max(initial=0.0))
    I_p = np.eye(p)
    I_l = np.eye(params.l)
    res, m = residual(zn, xn)
    for _ in range(max_iter):
        if np.linalg.norm(res) <= tol * scale:
            break
        Jm = force.jac(m)
        jac = np.block([[I_p - 0.5 * A, -0.5 * R @ Jm], [-0.5 * R.T, I_l]])
        delta = np.linalg.solve(jac, -res)
        zn = zn + delta[:p]
        xn = xn + delta[p:]
        res, m = residual(zn, xn)
    else:
        if np.linalg.norm(res) > tol * scale:
            raise NewtonDiverged(f"residual {np.linalg.norm(res):.3e} after {max_iter} iterations")
    _check_finite(zn, xn, state.step_index + 1)
    return CellState(zn, xn, state.step_index + 1)


def iteration_matrix(params: ModelParams, T) -> np.ndarray:
    """Exact one-step linear map on ``(z, x)`` for the force ``f = -T x``.

    The affine ``z0`` drift is not part of the matrix.
    """
    T = np.asarray(T, dtype=float)
    p, l = params.p, params.l
    R = params.R
    if params.cell == "euler":
        top = np.hstack([np.eye(p) + np.diag(params.D) + params.S, -R @ T])
        bottom = np.hstack([R.T, np.eye(l)])
        return np.vstack([top, bottom])
    lu = factor(assemble_M(params, -T))
    Minv = sla.lu_solve(lu, np.eye(p), check_finite=False)
    RtMinv = R.T @ Minv
    top = np.hstack([2.0 * Minv - np.eye(p), -Minv @ R @ T])
    bottom = np.hstack([RtMinv, np.eye(l) - 0.5 * RtMinv @ R @ T])
    return np.vstack([top, bottom])


def implicit_residual(params: ModelParams, force: ForceField, state: CellState, nxt: CellState) -> float:
    """Max-norm residual of the linearized implicit system for a step pair.

    The ``z0`` offset only shifts the observed update; the force is
    linearized along the latent part ``R^T (z + z') / 2`` of the motion.
    """
    z, x, zn, xn = state.z, state.x, nxt.z, nxt.x
    A = np.diag(params.D) + params.S
    R = params.R
    dx = 0.5 * R.T @ (z + zn)
    rz = zn - z - 0.5 * A @ (z + zn) - 0.5 * R @ force.jac(x) @ dx - R @ force.f(x)
    rx = xn - x - dx
    if params.z0 is not None:
        rx = rx - R.T @ params.z0
    return float(max(np.abs(rz).max(), np.abs(rx).max()))
