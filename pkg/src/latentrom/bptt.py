"""Reverse-mode gradients of the rollout loss.

The loss of one series is the mean squared observation error over its
data rows after the initial one; the loss of a batch is the mean over
series. Gradients are accumulated per series in ascending order so the
reduction is deterministic.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .cell import RolloutCache, rollout
from .dataset import Series
from .errors import CacheMismatch, NonFiniteGradient
from .forces import jac_dot
from .model_core import ForceField, ModelParams, diag_vjp


@dataclass
class GradientSet:
    g_theta_d: np.ndarray
    g_C: np.ndarray
    g_R: np.ndarray
    g_z0: Optional[np.ndarray] = None
    g_z_init: Optional[np.ndarray] = None

    @classmethod
    def zeros_like(cls, params: ModelParams) -> "GradientSet":
        return cls(
            np.zeros(params.p), np.zeros((params.p, params.p)), np.zeros((params.p, params.l)),
            None if params.z0 is None else np.zeros(params.p),
            None if params.z_init is None else np.zeros(params.p),
        )

    def to_vector(self) -> np.ndarray:
        parts = [self.g_theta_d.ravel(), self.g_C.ravel(), self.g_R.ravel()]
        parts += [g for g in (self.g_z0, self.g_z_init) if g is not None]
        return np.concatenate(parts)

    def __iadd__(self, other: "GradientSet"):
        self.g_theta_d += other.g_theta_d
        self.g_C += other.g_C
        self.g_R += other.g_R
        if self.g_z0 is not None:
            self.g_z0 += other.g_z0
        if self.g_z_init is not None:
            self.g_z_init += other.g_z_init
        return self

    def scale(self, a: float) -> "GradientSet":
        return GradientSet(
            a * self.g_theta_d, a * self.g_C, a * self.g_R,
            None if self.g_z0 is None else a * self.g_z0,
            None if self.g_z_init is None else a * self.g_z_init,
        )


def _targets(params: ModelParams, series: Series, n_steps):
    s = series.head(n_steps)
    if s.l != params.l:
        raise ValueError(f"series has l={s.l}, model has l={params.l}")
    k = s.step_indices(params.dt)
    return s, k


def _series_forward(params, force, series, n_steps):
    s, k = _targets(params, series, n_steps)
    states, cache = rollout(params, force, s.x[0], n_steps=int(k[-1]))
    mask = np.zeros(int(k[-1]) + 1, dtype=bool)
    mask[k[1:]] = True
    cache.mask = mask
    n_obs = max(len(k) - 1, 1)
    sq = 0.0
    for j, idx in enumerate(k[1:], start=1):
        r = s.x[j] - states[idx - 1].x
        sq += float(r @ r)
    return sq / n_obs, cache, s, k


class _Batch:
    """Series with identical sampling stacked as columns (linear forces only)."""

    def __init__(self, params, series, n_steps):
        heads = [_targets(params, s, n_steps) for s in series]
        self.k = heads[0][1]
        self.x = np.stack([h[0].x for h in heads], axis=2)  # rows x l x S
        self.size = len(series)


def _batchable(force, params, series, n_steps):
    if not force.is_linear or len(series) < 2:
        return False
    ks = [_targets(params, s, n_steps)[1] for s in series]
    return all(k.shape == ks[0].shape and np.array_equal(k, ks[0]) for k in ks)


def _batch_forward(params, force, batch):
    k = batch.k
    states, cache = rollout(params, force, batch.x[0], n_steps=int(k[-1]))
    n_obs = max(len(k) - 1, 1)
    sq = np.zeros(batch.size)
    for j, idx in enumerate(k[1:], start=1):
        r = batch.x[j] - states[idx - 1].x
        sq += np.sum(r * r, axis=0)
    return sq / n_obs, cache


def loss(params: ModelParams, force: ForceField, series: Sequence[Series], n_steps=None) -> float:
    """Mean over series of the per-series mean squared error."""
    if isinstance(series, Series):
        series = [series]
    if not series:
        return 0.0
    if _batchable(force, params, series, n_steps):
        per_series, _ = _batch_forward(params, force, _Batch(params, series, n_steps))
        return float(np.mean(per_series))
    return float(np.mean([_series_forward(params, force, s, n_steps)[0] for s in series]))


def _outer(a, b):
    """``sum_s a[:, s] b[:, s]^T``; plain outer product for vectors."""
    if a.ndim == 1:
        return np.outer(a, b)
    return a @ b.T


def _rowsum(v):
    return v if v.ndim == 1 else v.sum(axis=1)


def _midpoint_reverse(params, force, rec, zb, xb, grads, exact):
    R = params.R
    y = rec.y
    x = rec.state_in.x
    J = rec.jac_value
    grads.g_R += 0.5 * _outer(y, xb)
    if params.z0 is not None:
        grads.g_R += np.outer(params.z0, _rowsum(xb))
        grads.g_z0 += R @ _rowsum(xb)
    yb = 0.5 * (R @ xb) + zb
    bb = rec.solve(yb, trans=1)
    z_prev_b = 2.0 * bb - zb
    grads.g_R += _outer(bb, rec.f_value)
    Rtb = R.T @ bb
    x_prev_b = xb + J.T @ Rtb
    # M = I - (D+S)/2 - R J R^T/4 has adjoint -bb y^T
    grads.g_theta_d += 0.5 * _rowsum(bb * y)  # d-bar for now; mapped to theta at the end
    Sb = 0.5 * _outer(bb, y)
    grads.g_C += Sb - Sb.T
    Rty = R.T @ y
    grads.g_R += 0.25 * (_outer(bb, J @ Rty) + _outer(y, J.T @ Rtb))
    if exact and not force.is_linear:
        if x.ndim == 1:
            x_prev_b = x_prev_b + 0.25 * jac_dot(force, x, Rty, Rtb)
        else:
            for c in range(x.shape[1]):
                x_prev_b[:, c] += 0.25 * jac_dot(force, x[:, c], Rty[:, c], Rtb[:, c])
    return z_prev_b, x_prev_b


def _euler_reverse(params, force, rec, zb, xb, grads):
    R = params.R
    z, x = rec.state_in.z, rec.state_in.x
    D = params.D if z.ndim == 1 else params.D[:, None]
    zz = z if params.z0 is None else z + (params.z0 if z.ndim == 1 else params.z0[:, None])
    z_prev_b = zb + D * zb + params.S.T @ zb + R @ xb
    grads.g_R += _outer(zz, xb) + _outer(zb, rec.f_value)
    if params.z0 is not None:
        grads.g_z0 += R @ _rowsum(xb)
    grads.g_theta_d += _rowsum(zb * z)
    Sb = _outer(zb, z)
    grads.g_C += Sb - Sb.T
    x_prev_b = xb + force.jac(x).T @ (R.T @ zb)
    return z_prev_b, x_prev_b


def backward(params: ModelParams, force: ForceField, cache: RolloutCache, series: Series,
             n_steps=None, weight: float = 1.0, mode: str = "exact") -> GradientSet:
    """Gradient of ``weight * (per-series loss)`` through a cached rollout.

    ``mode='approximate'`` drops the dependence of the Jacobian on ``x``.
    """
    if mode not in ("exact", "approximate"):
        raise ValueError(f"mode must be 'exact' or 'approximate', got {mode!r}")
    if isinstance(series, _Batch):
        s, k = series, series.k
    else:
        s, k = _targets(params, series, n_steps)
    n = int(k[-1])
    if len(cache) != n or cache.cell != params.cell:
        raise CacheMismatch(f"cache holds {len(cache)} {cache.cell} steps, expected {n} {params.cell} steps")
    grads = GradientSet.zeros_like(params)
    if n == 0:
        return grads
    row_of = {int(idx): j for j, idx in enumerate(k)}
    coef = -2.0 * weight / max(len(k) - 1, 1)
    zb = np.zeros_like(cache.initial.z)
    xb = np.zeros_like(cache.initial.x)
    for i in range(n - 1, -1, -1):
        rec = cache.records[i]
        if rec.state_in.x.shape[0] != params.l or rec.state_in.z.shape[0] != params.p:
            raise CacheMismatch(f"record {i} does not match the parameter shapes")
        j = row_of.get(i + 1)
        if j is not None:
            xb = xb + coef * (s.x[j] - rec.state_out.x)
        if params.cell == "euler":
            zb, xb = _euler_reverse(params, force, rec, zb, xb, grads)
        else:
            zb, xb = _midpoint_reverse(params, force, rec, zb, xb, grads, mode == "exact")
    grads.g_theta_d = diag_vjp(params.theta_d, grads.g_theta_d, params.constrained)
    if params.z_init is not None:
        grads.g_z_init += _rowsum(zb)
    for g in (grads.g_theta_d, grads.g_C, grads.g_R, grads.g_z0, grads.g_z_init):
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradient("gradient has non-finite entries")
    return grads


def value_and_grad(params: ModelParams, force: ForceField, series: Sequence[Series], n_steps=None,
                   mode: str = "exact", n_jobs: int = 1):
    """Loss and its gradient over a batch of series.

    Series may be processed on ``n_jobs`` threads; results are reduced in
    series order.
    """
    if isinstance(series, Series):
        series = [series]
    total = GradientSet.zeros_like(params)
    if not series:
        return 0.0, total
    w = 1.0 / len(series)
    if _batchable(force, params, series, n_steps):
        batch = _Batch(params, series, n_steps)
        per_series, cache = _batch_forward(params, force, batch)
        return float(np.mean(per_series)), backward(params, force, cache, batch, weight=w, mode=mode)

    def one(s):
        value, cache, _, _ = _series_forward(params, force, s, n_steps)
        return value, backward(params, force, cache, s, n_steps, weight=w, mode=mode)

    if n_jobs > 1 and len(series) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(one, series))
    else:
        results = [one(s) for s in series]
    value = 0.0
    for v, g in results:
        value += w * v
        total += g
    return value, total


def gradient_check(params: ModelParams, force: ForceField, series: Sequence[Series], fd_step: float = 1e-6,
                   n_steps=None, mode: str = "exact"):
    """Compare the reverse-mode gradient with central differences.

    Returns a dict with ``max_rel_err``, ``mode`` and ``table``: one row
    ``(name, index, analytic, fd, rel_err)`` per scalar parameter, sorted
    by decreasing error. The relative error is
    ``|g - fd| / (|fd| + 1e-12)``.
    """
    if isinstance(series, Series):
        series = [series]
    n_params = params.to_vector().size
    if n_params > 10_000:
        raise ValueError(f"gradient_check is meant for small instances ({n_params} parameters)")
    _, grads = value_and_grad(params, force, series, n_steps, mode=mode)
    g = grads.to_vector()
    base = params.to_vector()
    fd = np.empty_like(base)
    for k in range(base.size):
        e = np.zeros_like(base)
        e[k] = fd_step
        lp = loss(params.from_vector(base + e), force, series, n_steps)
        lm = loss(params.from_vector(base - e), force, series, n_steps)
        fd[k] = (lp - lm) / (2 * fd_step)
    rel = np.abs(g - fd) / (np.abs(fd) + 1e-12)
    labels = []
    for name in params.names():
        arr = getattr(params, name)
        labels += [(name, idx) for idx in np.ndindex(arr.shape)]
    table = sorted(
        ((labels[k][0], labels[k][1], float(g[k]), float(fd[k]), float(rel[k])) for k in range(base.size)),
        key=lambda row: -row[4],
    )
    return {
        "max_rel_err": float(rel.max(initial=0.0)),
        "max_abs_err": float(np.abs(g - fd).max(initial=0.0)),
        "mode": mode,
        "expected_discrepancy": mode == "approximate" and not force.is_linear,
        "table": table,
    }
