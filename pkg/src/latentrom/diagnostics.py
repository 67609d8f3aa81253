"""Stability and accuracy diagnostics, plus the geometric ring metrics."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import DegenerateShape, ParseError, PoleInput
from .model_core import ModelParams


def lyapunov_series(states, energy) -> np.ndarray:
    """``V_i = |z_i|^2 / 2 + E(x_i)`` along a trajectory of cell states."""
    return np.array([0.5 * float(s.z @ s.z) + float(energy(s.x)) for s in states])


def spectral_radius(A) -> float:
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"spectral_radius needs a square matrix, got {A.shape}")
    return float(np.abs(np.linalg.eigvals(A)).max(initial=0.0))


def continuous_generator(params: ModelParams, T) -> np.ndarray:
    """Block generator of the continuous model recovered by dividing out ``dt``."""
    dt = params.dt
    T = np.asarray(T, dtype=float)
    R = params.R / dt
    A = (np.diag(params.D) + params.S) / dt
    return np.block([[A, -R @ T], [R.T, np.zeros((params.l, params.l))]])


def continuous_eigs(params: ModelParams, T) -> np.ndarray:
    return np.linalg.eigvals(continuous_generator(params, T))


def cayley_map(lambda_c, dt: float):
    """Midpoint-rule image ``(1 + dt lc/2) / (1 - dt lc/2)`` of a continuous eigenvalue."""
    lc = np.asarray(lambda_c, dtype=complex)
    den = 1.0 - 0.5 * dt * lc
    if np.any(den == 0):
        raise PoleInput("lambda_c = 2/dt is the pole of the Cayley map")
    out = (1.0 + 0.5 * dt * lc) / den
    return out if out.ndim else complex(out)


def inverse_cayley(lambda_d, dt: float):
    ld = np.asarray(lambda_d, dtype=complex)
    if np.any(ld == -1):
        raise PoleInput("lambda_d = -1 has no continuous preimage")
    out = (2.0 / dt) * (ld - 1.0) / (ld + 1.0)
    return out if out.ndim else complex(out)


def _points(points) -> np.ndarray:
    P = np.asarray(points, dtype=float)
    if P.ndim == 1:
        P = P.reshape(-1, 2)
    if P.shape[0] < 3 or P.shape[1] != 2:
        raise ValueError(f"need at least 3 planar points, got shape {P.shape}")
    return P


def perimeter(points) -> float:
    """Length of the closed polygon through the points."""
    P = _points(points)
    return float(np.linalg.norm(np.roll(P, -1, axis=0) - P, axis=1).sum())


def relative_perimeter_error(series_a, series_b) -> np.ndarray:
    """Per-frame ``|P(a) - P(b)| / P(b)``; ``b`` is the reference."""
    pa = np.array([perimeter(f) for f in series_a])
    pb = np.array([perimeter(f) for f in series_b])
    return np.abs(pa - pb) / pb


def center(points) -> np.ndarray:
    return _points(points).mean(axis=0)


def inclination_angle(points, previous: float | None = None) -> float:
    """Angle of the principal axis, clockwise from ``+y``.

    The axis is sign-ambiguous, so the result is shifted by the multiple
    of pi that brings it closest to ``previous`` when one is given.
    """
    P = _points(points)
    Q = P - P.mean(axis=0)
    M = Q.T @ Q / Q.shape[0]
    w, V = np.linalg.eigh(M)
    if w[1] - w[0] <= 1e-9 * max(w[1] + w[0], 1e-300):
        raise DegenerateShape("second moments are isotropic; the principal axis is undefined")
    v = V[:, 1]
    theta = np.arctan2(v[0], v[1])
    if previous is None:
        theta = (theta + 0.5 * np.pi) % np.pi - 0.5 * np.pi
    else:
        theta += np.pi * np.round((previous - theta) / np.pi)
    return float(theta)


def inclination_series(frames, start: float | None = None) -> np.ndarray:
    """Continued inclination angle over a sequence of frames."""
    out, prev = [], start
    for f in frames:
        prev = inclination_angle(f, prev)
        out.append(prev)
    return np.array(out)


def export_plot_data(path, header_comment: str | None = None, **series) -> None:
    """Write equally long named 1-D series as whitespace-separated columns."""
    if not series:
        raise ValueError("no series given")
    cols = [np.asarray(v, dtype=float).reshape(-1) for v in series.values()]
    n = {c.size for c in cols}
    if len(n) != 1:
        raise ValueError(f"series lengths differ: {sorted(n)}")
    lines = []
    if header_comment:
        lines += ["# " + ln for ln in header_comment.splitlines()]
    lines.append(" ".join(series))
    for row in np.stack(cols, axis=1):
        lines.append(" ".join("%.17g" % v for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def read_plot_data(path) -> dict:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ParseError(f"{path}: empty plot-data file")
    names = lines[0].split()
    try:
        data = np.array([[float(v) for v in ln.split()] for ln in lines[1:]]).reshape(-1, len(names))
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    return {name: data[:, i] for i, name in enumerate(names)}
