"""Ground-truth data: random stable full-order systems and Jeffery orbits.

File formats are plain text with 17 significant digits, so every
float survives a save/load round trip bit for bit.
"""

from __future__ import annotations

import json
import warnings
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from .dataset import Dataset, Series
from .errors import InconsistentDt, ParseError, UnstableMatrixWarning
from .forces import linear_force
from .model_core import FomSystem, ForceField

FORMAT_VERSION = 1
_FMT = "%.17g"


def random_stable_fom(p_f: int, l: int, rng, dissipation_scale: float = 1.0,  # noqa: E741
                      coupling_scale: float = 1.0, skew_scale: float = 1.0,
                      base_vector=None, force: ForceField | None = None) -> FomSystem:
    """Random ``W = S_w - B B^T`` with skew ``S_w`` and coupling ``L``.

    Scales are normalised by ``sqrt(p_f)`` so eigenvalue magnitudes stay
    O(scale) independent of the dimension. With ``base_vector`` every
    column of ``L`` is a random permutation of it instead.
    """
    if not p_f >= l >= 1:
        raise ValueError(f"need p_f >= l >= 1, got p_f={p_f}, l={l}")
    A = rng.standard_normal((p_f, p_f))
    S_w = skew_scale * (A - A.T) / np.sqrt(2.0 * p_f)
    B = dissipation_scale * rng.standard_normal((p_f, p_f)) / np.sqrt(p_f)
    W = S_w - B @ B.T
    if base_vector is not None:
        base_vector = np.asarray(base_vector, dtype=float).reshape(-1)
        if base_vector.size != p_f:
            raise ValueError(f"base_vector must have {p_f} entries")
        L = np.stack([rng.permutation(base_vector) for _ in range(l)], axis=1)
    else:
        L = coupling_scale * rng.standard_normal((p_f, l)) / np.sqrt(p_f)
    if force is None:
        force = linear_force(np.eye(l))
    return FomSystem(W, L, force)


def coupled_matrix(fom: FomSystem) -> np.ndarray:
    """Generator of the full linear system ``[[W, -L T], [L^T, 0]]``."""
    if fom.force.T is None:
        raise ValueError("coupled_matrix needs a linear force")
    return np.block([[fom.W, -fom.L @ fom.force.T], [fom.L.T, np.zeros((fom.l, fom.l))]])


def integrate_fom(fom: FomSystem, x0, z0_latent=None, dt: float = 1e-3, n_steps: int = 150,
                  method: str = "rk4", substeps: int = 1) -> Series:
    """Ground-truth observed series at ``t_j = j dt``, ``j = 0..n_steps``."""
    x = np.array(x0, dtype=float).reshape(-1)
    u = np.zeros(fom.p) if z0_latent is None else np.array(z0_latent, dtype=float).reshape(-1)
    if x.size != fom.l or u.size != fom.p:
        raise ValueError("initial condition does not match the system dimensions")
    out = np.empty((n_steps + 1, fom.l))
    out[0] = x
    if method == "exact-linear":
        G = expm(coupled_matrix(fom) * dt)
        w = np.concatenate([u, x])
        for j in range(n_steps):
            w = G @ w
            out[j + 1] = w[fom.p:]
    elif method == "rk4":
        h = dt / substeps
        for j in range(n_steps):
            for _ in range(substeps):
                u, x = rk4_step(fom, u, x, h)
            out[j + 1] = x
    else:
        raise ValueError(f"unknown method {method!r}")
    return Series(dt * np.arange(n_steps + 1), out)


def rk4_step(fom: FomSystem, u, x, h):
    k1u, k1x = fom.rhs(u, x)
    k2u, k2x = fom.rhs(u + 0.5 * h * k1u, x + 0.5 * h * k1x)
    k3u, k3x = fom.rhs(u + 0.5 * h * k2u, x + 0.5 * h * k2x)
    k4u, k4x = fom.rhs(u + h * k3u, x + h * k3x)
    return (u + h / 6 * (k1u + 2 * k2u + 2 * k3u + k4u),
            x + h / 6 * (k1x + 2 * k2x + 2 * k3x + k4x))


def rk4_trajectory(fom: FomSystem, u0, x0, h, n_steps):
    """Full ``(u, x)`` RK4 trajectory, initial state included."""
    u, x = np.array(u0, dtype=float), np.array(x0, dtype=float)
    us, xs = [u], [x]
    for _ in range(n_steps):
        u, x = rk4_step(fom, u, x, h)
        us.append(u)
        xs.append(x)
    return np.array(us), np.array(xs)


def fom_dataset(fom: FomSystem, n_series: int, n_steps: int, dt: float, rng,
                x_range=(-1.0, 1.0), method: str = "rk4", substeps: int = 1,
                metadata: dict | None = None) -> Dataset:
    """Series with ``x(0)`` uniform in ``x_range`` and zero latent start."""
    series = []
    for _ in range(n_series):
        x0 = rng.uniform(x_range[0], x_range[1], size=fom.l)
        series.append(integrate_fom(fom, x0, None, dt, n_steps, method, substeps))
    meta = {"generator": "stable-fom", "p_f": fom.p, "l": fom.l}
    meta.update(metadata or {})
    return Dataset(series, dt, meta)


def jeffery_angle(t, a: float, b: float, r: float) -> np.ndarray:
    """Inclination angle of the major axis, continued across branches.

    ``tan(theta) = (a/b) tan(psi)`` with ``psi = a b r t / (a^2 + b^2)``;
    every half-turn of ``psi`` adds ``pi`` to ``theta``.
    """
    psi = a * b * r * np.asarray(t, dtype=float) / (a * a + b * b)
    k = np.floor((psi + 0.5 * np.pi) / np.pi)
    shifted = psi - k * np.pi  # in [-pi/2, pi/2)
    return np.arctan2(a * np.sin(shifted), b * np.cos(shifted)) + k * np.pi


def jeffery_period(a: float, b: float, r: float) -> float:
    return 2 * np.pi * (a * a + b * b) / (a * b * abs(r))


def ellipse_points(a: float, b: float, n_points: int, theta: float = 0.0, center=(0.0, 0.0)) -> np.ndarray:
    """Interleaved coordinates of an ellipse with semi-major ``a`` along ``y``.

    ``theta`` rotates clockwise from the ``y`` axis, so the tip of the
    major axis sits at ``a (sin theta, cos theta)``.
    """
    phi = 2 * np.pi * np.arange(n_points) / n_points
    px, py = b * np.cos(phi), a * np.sin(phi)
    c, s = np.cos(theta), np.sin(theta)
    X = np.stack([c * px + s * py + center[0], -s * px + c * py + center[1]], axis=1)
    return X.reshape(-1)


def jeffery_orbit(a: float, b: float, r: float, u0: float, n_points: int, dt: float, n_steps: int) -> Series:
    """Boundary points of a rigid ellipse rotating (and drifting) in shear flow."""
    if not a > b > 0:
        raise ValueError("need a > b > 0")
    if not r > 0:
        raise ValueError("need r > 0")
    t = dt * np.arange(n_steps + 1)
    theta = jeffery_angle(t, a, b, r)
    x = np.stack([ellipse_points(a, b, n_points, th, (u0 * tj, 0.0)) for th, tj in zip(theta, t)])
    return Series(t, x)


# ---------------------------------------------------------------- file formats

def _fmt_row(values) -> str:
    return " ".join(_FMT % v for v in values)


def save_dataset(dataset: Dataset, path) -> None:
    lines = [
        "# latentrom dataset",
        f"version {FORMAT_VERSION}",
        f"dt {_FMT % dataset.dt}",
        f"l {dataset.l}",
        f"n_series {len(dataset.series)}",
        "provenance " + json.dumps(dataset.metadata, sort_keys=True),
    ]
    for i, s in enumerate(dataset.series):
        lines.append(f"series {i} {len(s)}")
        lines.extend(_fmt_row(np.concatenate([[tj], xj])) for tj, xj in zip(s.t, s.x))
    Path(path).write_text("\n".join(lines) + "\n")


def _header_value(lines, pos, key, path):
    if pos >= len(lines):
        raise ParseError(f"{path}: missing header field {key!r}")
    parts = lines[pos].split(None, 1)
    if not parts or parts[0] != key:
        raise ParseError(f"{path}:{pos + 1}: expected {key!r}, got {lines[pos]!r}")
    return parts[1] if len(parts) > 1 else ""


def load_dataset(path) -> Dataset:
    text = Path(path).read_text()
    lines = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
    try:
        version = int(_header_value(lines, 0, "version", path))
        dt = float(_header_value(lines, 1, "dt", path))
        l = int(_header_value(lines, 2, "l", path))  # noqa: E741
        n_series = int(_header_value(lines, 3, "n_series", path))
        meta = json.loads(_header_value(lines, 4, "provenance", path) or "{}")
    except (ValueError, json.JSONDecodeError) as exc:
        if isinstance(exc, ParseError):
            raise
        raise ParseError(f"{path}: bad header: {exc}") from exc
    if version != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported dataset version {version}")
    pos = 5
    series = []
    for i in range(n_series):
        head = _header_value(lines, pos, "series", path).split()
        if len(head) != 2 or int(head[0]) != i:
            raise ParseError(f"{path}: malformed series header {lines[pos]!r}")
        n_rows = int(head[1])
        block = lines[pos + 1:pos + 1 + n_rows]
        if len(block) != n_rows:
            raise ParseError(f"{path}: series {i} is truncated")
        try:
            arr = np.array([[float(v) for v in row.split()] for row in block]).reshape(n_rows, -1)
        except ValueError as exc:
            raise ParseError(f"{path}: series {i}: {exc}") from exc
        if arr.shape[1] != l + 1:
            raise ParseError(f"{path}: series {i} rows have {arr.shape[1] - 1} values, header says l={l}")
        if n_rows > 1 and np.any(np.abs(np.diff(arr[:, 0]) - dt) > 1e-9):
            raise InconsistentDt(f"{path}: series {i} timestamps disagree with dt = {dt!r}")
        series.append(Series(arr[:, 0], arr[:, 1:]))
        pos += 1 + n_rows
    if pos != len(lines):
        raise ParseError(f"{path}: {len(lines) - pos} unexpected trailing lines")
    meta.setdefault("l", l)
    return Dataset(series, dt, meta)


def _matrix_lines(M) -> list:
    M = np.atleast_2d(np.asarray(M, dtype=float))
    return [f"{M.shape[0]} {M.shape[1]}"] + [_fmt_row(row) for row in M]


def save_matrix(M, path) -> None:
    Path(path).write_text("\n".join(_matrix_lines(M)) + "\n")


def _parse_matrix(lines, pos, path):
    try:
        rows, cols = (int(v) for v in lines[pos].split())
        data = [[float(v) for v in ln.split()] for ln in lines[pos + 1:pos + 1 + rows]]
        M = np.array(data, dtype=float)
    except (ValueError, IndexError) as exc:
        raise ParseError(f"{path}: malformed matrix block near line {pos + 1}: {exc}") from exc
    if M.shape != (rows, cols):
        raise ParseError(f"{path}: matrix block declares {rows}x{cols} but holds {M.shape}")
    return M, pos + 1 + rows


def load_matrix(path) -> np.ndarray:
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    if not lines:
        raise ParseError(f"{path}: empty matrix file")
    M, pos = _parse_matrix(lines, 0, path)
    if pos != len(lines):
        raise ParseError(f"{path}: trailing data after matrix")
    return M


def save_fom_matrices(fom: FomSystem, path) -> None:
    lines = ["# latentrom fom matrices", "matrix W"] + _matrix_lines(fom.W) + ["matrix L"] + _matrix_lines(fom.L)
    Path(path).write_text("\n".join(lines) + "\n")


def load_fom_matrices(path, force: ForceField | None = None) -> FomSystem:
    """Read named ``W`` (or ``A``) and ``L`` (or ``b``) blocks.

    Warns with :class:`UnstableMatrixWarning` when the symmetric part of
    ``W`` is not negative semi-definite; the system is returned anyway.
    """
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip() and not ln.startswith("#")]
    blocks, pos = {}, 0
    while pos < len(lines):
        head = lines[pos].split()
        if len(head) != 2 or head[0] != "matrix":
            raise ParseError(f"{path}: expected 'matrix <name>' at block {len(blocks) + 1}, got {lines[pos]!r}")
        blocks[head[1]], pos = _parse_matrix(lines, pos + 1, path)
    W = blocks.get("W", blocks.get("A"))
    L = blocks.get("L", blocks.get("b"))
    if W is None or L is None:
        raise ParseError(f"{path}: need blocks W (or A) and L (or b), found {sorted(blocks)}")
    if W.shape[0] != W.shape[1] or L.shape[0] != W.shape[0]:
        raise ParseError(f"{path}: W is {W.shape} and L is {L.shape}; dimensions do not match")
    if force is None:
        force = linear_force(np.eye(L.shape[1]))
    fom = FomSystem(W, L, force)
    if not fom.is_stable:
        warnings.warn(f"{path}: symmetric part of W is not negative semi-definite", UnstableMatrixWarning)
    return fom
