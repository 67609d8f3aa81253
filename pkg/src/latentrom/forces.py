"""Concrete force fields: linear, Hookean spring ring and discrete bending.

Ring coordinates are stored interleaved, ``x = (x1, y1, ..., xm, ym)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AsymmetricT, CoincidentPoints, DegenerateEdge
from .model_core import ForceField


@dataclass(frozen=True)
class RingTopology:
    n_points: int
    closed: bool = True

    def __post_init__(self):
        if self.n_points < 3:
            raise ValueError(f"a ring needs at least 3 points, got {self.n_points}")
        if not self.closed:
            raise ValueError("only closed rings are supported")

    @property
    def l(self) -> int:  # noqa: E743
        return 2 * self.n_points


def fd_step(x) -> float:
    return 1e-5 * (1.0 + float(np.max(np.abs(x), initial=0.0)))


def fd_jacobian(f, x, h=None) -> np.ndarray:
    """Central-difference Jacobian of ``f`` (a callable or a ForceField)."""
    if isinstance(f, ForceField):
        f = f.f
    x = np.asarray(x, dtype=float)
    h = fd_step(x) if h is None else h
    if h <= 0:
        raise ValueError("h must be positive")
    cols = []
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.stack(cols, axis=1)


def jac_dot(force: ForceField, x, v, u) -> np.ndarray:
    """Gradient in ``x`` of ``u @ J(x) @ v``.

    Uses the force's own contraction when it has one. Otherwise the
    directional derivative of ``J(x).T @ u`` along ``v`` is taken by
    central differences; for forces whose Jacobian is itself a finite
    difference, a four-point mixed second difference of ``f`` is used
    (valid because conservative forces have a symmetric Jacobian).
    """
    if force.jac_dot is not None:
        return force.jac_dot(x, v, u)
    if force.T is not None:
        return np.zeros_like(x)
    nv, nu = np.linalg.norm(v), np.linalg.norm(u)
    if nv == 0 or nu == 0:
        return np.zeros_like(x)
    vh, uh = v / nv, u / nu
    if force.jac_mode == "analytic" or not force.conservative:
        h = 1e-5 * (1.0 + np.abs(x).max())
        g = (force.jac(x + h * vh).T @ uh - force.jac(x - h * vh).T @ uh) / (2 * h)
    else:
        h = 1e-4 * (1.0 + np.abs(x).max())
        f = force.f
        g = (f(x + h * vh + h * uh) - f(x + h * vh - h * uh)
             - f(x - h * vh + h * uh) + f(x - h * vh - h * uh)) / (4 * h * h)
    return nv * nu * g


def linear_force(T) -> ForceField:
    """``f(x) = -T x`` with energy ``x.T T x / 2``."""
    T = np.array(T, dtype=float)
    if T.ndim != 2 or T.shape[0] != T.shape[1]:
        raise ValueError(f"T must be square, got {T.shape}")
    asym = np.abs(T - T.T).max(initial=0.0)
    if asym > 1e-10:
        raise AsymmetricT(f"T is not symmetric (max |T - T^T| = {asym:.3e})")
    T.flags.writeable = False
    negT = -T

    return ForceField(
        f=lambda x: -(T @ x),
        jac=lambda x: negT,
        energy=lambda x: 0.5 * float(x @ (T @ x)),
        jac_mode="analytic",
        jac_dot=lambda x, v, u: np.zeros_like(np.asarray(x, dtype=float)),
        T=T,
        name="linear",
        spec={"kind": "linear", "T": T.tolist()},
    )


def ring_laplacian(n_points: int) -> np.ndarray:
    """Graph Laplacian of a closed ring, expanded to interleaved 2-D coords."""
    K = 2 * np.eye(n_points) - np.roll(np.eye(n_points), 1, axis=1) - np.roll(np.eye(n_points), -1, axis=1)
    return np.kron(K, np.eye(2))


def _edges(x, n):
    P = np.asarray(x, dtype=float).reshape(n, 2)
    d = np.roll(P, -1, axis=0) - P  # edge i runs from point i to i+1
    r = np.sqrt(np.einsum("ij,ij->i", d, d))
    return P, d, r


def spring_ring(topology: RingTopology, k_s: float, rest_length: float = 0.0) -> ForceField:
    """Hookean springs between ring neighbours with common rest length."""
    if not k_s > 0:
        raise ValueError("k_s must be positive")
    if rest_length < 0:
        raise ValueError("rest_length must be non-negative")
    n = topology.n_points
    L = float(rest_length)
    spec = {"kind": "spring-ring", "n_points": n, "k_s": float(k_s), "rest_length": L}

    if L == 0.0:
        force = linear_force(k_s * ring_laplacian(n))
        return ForceField(force.f, force.jac, force.energy, "analytic", force.jac_dot,
                          force.T, "spring-ring", spec)

    def check(r):
        if r.min() < 1e-8:
            raise CoincidentPoints(f"edge {int(r.argmin())} has length {r.min():.3e}")

    def energy(x):
        _, _, r = _edges(x, n)
        return 0.5 * k_s * float(np.sum((r - L) ** 2))

    def f(x):
        _, d, r = _edges(x, n)
        check(r)
        t = (k_s * (1.0 - L / r))[:, None] * d
        return (t - np.roll(t, 1, axis=0)).reshape(-1)

    def jac(x):
        _, d, r = _edges(x, n)
        check(r)
        dh = d / r[:, None]
        H = k_s * ((1.0 - L / r)[:, None, None] * np.eye(2) + (L / r)[:, None, None] * np.einsum("ei,ej->eij", dh, dh))
        J = np.zeros((2 * n, 2 * n))
        for e in range(n):
            a, b = 2 * e, 2 * ((e + 1) % n)
            J[a:a + 2, a:a + 2] -= H[e]
            J[b:b + 2, b:b + 2] -= H[e]
            J[a:a + 2, b:b + 2] += H[e]
            J[b:b + 2, a:a + 2] += H[e]
        return J

    def contraction(x, v, u):
        _, d, r = _edges(x, n)
        check(r)
        V = np.asarray(v, dtype=float).reshape(n, 2)
        U = np.asarray(u, dtype=float).reshape(n, 2)
        du = np.roll(U, -1, axis=0) - U
        dv = np.roll(V, -1, axis=0) - V
        uv = np.einsum("ij,ij->i", du, dv)
        ud = np.einsum("ij,ij->i", du, d)
        vd = np.einsum("ij,ij->i", dv, d)
        r3, r5 = r ** 3, r ** 5
        grad_d = k_s * L * ((uv / r3)[:, None] * d + (vd / r3)[:, None] * du
                            + (ud / r3)[:, None] * dv - (3 * ud * vd / r5)[:, None] * d)
        # phi depends on d_e = x_{e+1} - x_e; J = -Hess so negate
        g = np.roll(grad_d, 1, axis=0) - grad_d
        return -g.reshape(-1)

    return ForceField(f, jac, energy, "analytic", contraction, None, "spring-ring", spec)


def ring_angles(x, n_points: int) -> np.ndarray:
    """Signed angle at each point between edges to its previous and next neighbours."""
    P = np.asarray(x, dtype=float).reshape(n_points, 2)
    e1 = np.roll(P, 1, axis=0) - P
    e2 = np.roll(P, -1, axis=0) - P
    cross = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
    dot = np.einsum("ij,ij->i", e1, e2)
    return np.arctan2(cross, dot)


def _angle_derivs(e):
    """Gradient and Hessian of ``atan2(e_y, e_x)`` for each row of ``e``."""
    x, y = e[:, 0], e[:, 1]
    r2 = x * x + y * y
    g = np.stack([-y, x], axis=1) / r2[:, None]
    r4 = r2 * r2
    hxy = (y * y - x * x) / r4
    H = np.empty((e.shape[0], 2, 2))
    H[:, 0, 0] = 2 * x * y / r4
    H[:, 1, 1] = -H[:, 0, 0]
    H[:, 0, 1] = H[:, 1, 0] = hxy
    return g, H


# (e1, e2) = (P_prev - P, P_next - P) as a map from (P_prev, P, P_next)
_EDGE_MAP = np.array([
    [1, 0, -1, 0, 0, 0],
    [0, 1, 0, -1, 0, 0],
    [0, 0, -1, 0, 1, 0],
    [0, 0, 0, -1, 0, 1],
], dtype=float)


def bending_ring(topology: RingTopology, sigma_b: float, omega0) -> ForceField:
    """Discrete bending energy ``sigma_b * sum(1 - cos(omega - omega0))``.

    ``omega`` at a point is the angle from the edge to its previous
    neighbour to the edge to its next one. Force and Jacobian are
    analytic; the Jacobian's own derivative falls back to differences.
    """
    n = topology.n_points
    omega0 = np.array(omega0, dtype=float).reshape(-1)
    if omega0.size != n:
        raise ValueError(f"omega0 must have {n} entries, got {omega0.size}")
    omega0.flags.writeable = False
    sigma_b = float(sigma_b)
    idx = np.arange(n)
    # coordinates of (P_prev, P, P_next) for every point
    cols = np.stack([2 * ((idx - 1) % n), 2 * ((idx - 1) % n) + 1, 2 * idx, 2 * idx + 1,
                     2 * ((idx + 1) % n), 2 * ((idx + 1) % n) + 1], axis=1)

    def geometry(x):
        P = np.asarray(x, dtype=float).reshape(n, 2)
        e1 = np.roll(P, 1, axis=0) - P
        e2 = np.roll(P, -1, axis=0) - P
        n1 = np.einsum("ij,ij->i", e1, e1)
        n2 = np.einsum("ij,ij->i", e2, e2)
        if min(n1.min(), n2.min()) < 1e-24:
            raise DegenerateEdge("zero-length edge makes the bending angle undefined")
        return e1, e2

    def energy(x):
        return sigma_b * float(np.sum(1.0 - np.cos(ring_angles(x, n) - omega0)))

    def local(x):
        e1, e2 = geometry(x)
        c = e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0]
        s = np.einsum("ij,ij->i", e1, e2)
        delta = np.arctan2(c, s) - omega0
        g1, H1 = _angle_derivs(e1)
        g2, H2 = _angle_derivs(e2)
        # omega = angle(e2) - angle(e1) up to multiples of 2 pi
        grad_e = np.concatenate([-g1, g2], axis=1)
        return delta, grad_e, H1, H2

    def f(x):
        delta, grad_e, _, _ = local(x)
        gp = (sigma_b * np.sin(delta))[:, None] * (grad_e @ _EDGE_MAP)
        out = np.zeros(2 * n)
        np.add.at(out, cols, gp)
        return -out

    def jac(x):
        delta, grad_e, H1, H2 = local(x)
        He = np.zeros((n, 4, 4))
        He[:, :2, :2] = -H1
        He[:, 2:, 2:] = H2
        He *= np.sin(delta)[:, None, None]
        He += np.cos(delta)[:, None, None] * np.einsum("ni,nj->nij", grad_e, grad_e)
        Hp = sigma_b * np.einsum("ai,nab,bj->nij", _EDGE_MAP, He, _EDGE_MAP)
        J = np.zeros((2 * n, 2 * n))
        np.add.at(J, (cols[:, :, None], cols[:, None, :]), -Hp)
        return J

    spec = {"kind": "bending-ring", "n_points": n, "sigma_b": sigma_b, "omega0": omega0.tolist()}
    return ForceField(f, jac, energy, "analytic", None, None, "bending-ring", spec)


def compose(*forces: ForceField) -> ForceField:
    """Sum of force fields."""
    if not forces:
        raise ValueError("compose needs at least one force")
    if len(forces) == 1:
        return forces[0]

    def f(x):
        return sum(ff.f(x) for ff in forces)

    def jac(x):
        return sum(ff.jac(x) for ff in forces)

    energy = None
    if all(ff.energy is not None for ff in forces):
        def energy(x):
            return sum(ff.energy(x) for ff in forces)

    T = sum(ff.T for ff in forces) if all(ff.T is not None for ff in forces) else None
    mode = "analytic" if all(ff.jac_mode == "analytic" for ff in forces) else "finite-difference"
    parts = list(forces)

    def contraction(x, v, u):
        return sum(jac_dot(ff, x, v, u) for ff in parts)

    spec = {"kind": "sum", "parts": [ff.spec for ff in forces]}
    return ForceField(f, jac, energy, mode, contraction, T, "+".join(ff.name for ff in forces), spec)


def force_from_spec(spec: dict) -> ForceField:
    """Rebuild a force from the dictionary stored in its ``spec`` field."""
    kind = spec.get("kind")
    if kind == "linear":
        return linear_force(np.array(spec["T"], dtype=float))
    if kind == "identity":
        return linear_force(np.eye(int(spec["l"])))
    if kind == "spring-ring":
        return spring_ring(RingTopology(int(spec["n_points"])), spec["k_s"], spec.get("rest_length", 0.0))
    if kind == "bending-ring":
        return bending_ring(RingTopology(int(spec["n_points"])), spec["sigma_b"], spec["omega0"])
    if kind == "sum":
        return compose(*[force_from_spec(s) for s in spec["parts"]])
    raise ValueError(f"unknown force kind {kind!r}")
