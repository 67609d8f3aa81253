"""Model parameterization, canonical form and continuous-level stability.

The trainable discrete model carries

* ``theta_d``: unconstrained vector generating the dissipation diagonal,
* ``C``: generator of the skew-symmetric part, ``S = C - C.T``,
* ``R``: latent/observed coupling,
* ``z0``: optional latent offset entering only the observed update,
* ``z_init``: optional trainable latent initial state.

The discrete matrices absorb the timestep; ``dt`` is metadata used to
recover the continuous model.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

CELL_KINDS = ("midpoint-stable", "midpoint-unconstrained", "euler")


def diag_from(theta_d, constrained: bool = True) -> np.ndarray:
    """Map unconstrained parameters to the dissipation diagonal.

    With ``constrained`` the map is ``d = -theta**2`` so every entry is
    non-positive for every input. Without it the parameters are used
    as-is (the unconstrained-midpoint baseline).
    """
    theta_d = np.asarray(theta_d, dtype=float)
    if constrained:
        return -(theta_d * theta_d)
    return theta_d.copy()


def diag_vjp(theta_d, d_bar, constrained: bool = True) -> np.ndarray:
    """Pull a diagonal adjoint back through :func:`diag_from`."""
    theta_d = np.asarray(theta_d, dtype=float)
    if constrained:
        return -2.0 * theta_d * d_bar
    return np.array(d_bar, dtype=float)


def skew_from(C) -> np.ndarray:
    """Return ``C - C.T``, antisymmetric bit for bit."""
    C = np.asarray(C, dtype=float)
    if C.ndim != 2 or C.shape[0] != C.shape[1]:
        raise ValueError(f"C must be square, got shape {C.shape}")
    return C - C.T


@dataclass(frozen=True)
class ModelParams:
    theta_d: np.ndarray
    C: np.ndarray
    R: np.ndarray
    dt: float
    z0: Optional[np.ndarray] = None
    z_init: Optional[np.ndarray] = None
    cell: str = "midpoint-stable"

    def __post_init__(self):
        theta_d = np.array(self.theta_d, dtype=float).reshape(-1)
        C = np.array(self.C, dtype=float)
        R = np.array(self.R, dtype=float)
        if R.ndim == 1:
            R = R.reshape(-1, 1)
        p = theta_d.size
        if p < 1:
            raise ValueError("latent dimension p must be at least 1")
        if C.shape != (p, p):
            raise ValueError(f"C must have shape {(p, p)}, got {C.shape}")
        if R.ndim != 2 or R.shape[0] != p or R.shape[1] < 1:
            raise ValueError(f"R must have shape (p={p}, l>=1), got {R.shape}")
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.cell not in CELL_KINDS:
            raise ValueError(f"unknown cell kind {self.cell!r}; expected one of {CELL_KINDS}")
        object.__setattr__(self, "theta_d", theta_d)
        object.__setattr__(self, "C", C)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "dt", float(self.dt))
        for name in ("z0", "z_init"):
            value = getattr(self, name)
            if value is not None:
                value = np.array(value, dtype=float).reshape(-1)
                if value.size != p:
                    raise ValueError(f"{name} must have length {p}, got {value.size}")
                object.__setattr__(self, name, value)
        for arr in (self.theta_d, self.C, self.R, self.z0, self.z_init):
            if arr is not None:
                arr.flags.writeable = False

    @property
    def p(self) -> int:
        return self.theta_d.size

    @property
    def l(self) -> int:  # noqa: E743
        return self.R.shape[1]

    @property
    def constrained(self) -> bool:
        return self.cell != "midpoint-unconstrained"

    @property
    def D(self) -> np.ndarray:
        """Diagonal of the discrete dissipation matrix."""
        return diag_from(self.theta_d, self.constrained)

    @property
    def S(self) -> np.ndarray:
        return skew_from(self.C)

    def replace(self, **changes) -> "ModelParams":
        return dataclasses.replace(self, **changes)

    # Flat vector view used by the optimizer and gradient checks.
    def names(self) -> list[str]:
        names = ["theta_d", "C", "R"]
        if self.z0 is not None:
            names.append("z0")
        if self.z_init is not None:
            names.append("z_init")
        return names

    def to_vector(self) -> np.ndarray:
        return np.concatenate([np.ravel(getattr(self, n)) for n in self.names()])

    def from_vector(self, vec) -> "ModelParams":
        vec = np.asarray(vec, dtype=float)
        out, start = {}, 0
        for name in self.names():
            shape = getattr(self, name).shape
            size = int(np.prod(shape))
            out[name] = vec[start:start + size].reshape(shape).copy()
            start += size
        if start != vec.size:
            raise ValueError(f"vector has {vec.size} entries, expected {start}")
        return self.replace(**out)

    @classmethod
    def zeros(cls, p: int, l: int, dt: float = 1.0, *, z0: bool = False,  # noqa: E741
              z_init: bool = False, cell: str = "midpoint-stable") -> "ModelParams":
        return cls(
            theta_d=np.zeros(p),
            C=np.zeros((p, p)),
            R=np.zeros((p, l)),
            dt=dt,
            z0=np.zeros(p) if z0 else None,
            z_init=np.zeros(p) if z_init else None,
            cell=cell,
        )


@dataclass(frozen=True)
class ForceField:
    """Force ``f(x)`` with its Jacobian and optional energy.

    ``jac_dot(x, v, u)`` returns the vector ``g`` with
    ``g[k] = u @ dJ/dx_k @ v``, i.e. the gradient in ``x`` of
    ``u @ J(x) @ v``. ``T`` is set for linear forces ``f = -T x``.
    """

    f: Callable[[np.ndarray], np.ndarray]
    jac: Callable[[np.ndarray], np.ndarray]
    energy: Optional[Callable[[np.ndarray], float]] = None
    jac_mode: str = "analytic"
    jac_dot: Optional[Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]] = None
    T: Optional[np.ndarray] = None
    name: str = "force"
    spec: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.jac_mode not in ("analytic", "finite-difference"):
            raise ValueError(f"jac_mode must be 'analytic' or 'finite-difference', got {self.jac_mode!r}")

    @property
    def is_linear(self) -> bool:
        return self.T is not None

    @property
    def conservative(self) -> bool:
        return self.energy is not None

    def __add__(self, other: "ForceField") -> "ForceField":
        from .forces import compose

        return compose(self, other)


def _sym_max_eig(W: np.ndarray) -> float:
    return float(np.linalg.eigvalsh(0.5 * (W + W.T)).max())


@dataclass(frozen=True)
class FomSystem:
    """Full-order system ``u' = W u + L f(x)``, ``x' = L^T u``."""

    W: np.ndarray
    L: np.ndarray
    force: ForceField

    def __post_init__(self):
        W = np.array(self.W, dtype=float)
        L = np.array(self.L, dtype=float)
        if L.ndim == 1:
            L = L.reshape(-1, 1)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError(f"W must be square, got {W.shape}")
        if L.shape[0] != W.shape[0]:
            raise ValueError(f"L has {L.shape[0]} rows but W is {W.shape[0]}x{W.shape[0]}")
        object.__setattr__(self, "W", W)
        object.__setattr__(self, "L", L)

    @property
    def p(self) -> int:
        return self.W.shape[0]

    @property
    def l(self) -> int:  # noqa: E743
        return self.L.shape[1]

    @property
    def is_stable(self) -> bool:
        """True when the symmetric part of ``W`` is negative semi-definite."""
        return _sym_max_eig(self.W) <= 1e-12

    def rhs(self, u: np.ndarray, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.W @ u + self.L @ self.force.f(x), self.L.T @ u


def canonicalize(fom: FomSystem):
    """Rotate the latent space so the dissipation becomes diagonal.

    Returns ``(D, S, R, P)`` with ``(W + W.T)/2 = P diag(D) P.T``,
    ``S = P.T (W - W.T)/2 P`` and ``R = P.T L``. Eigenvalues come out
    ascending.
    """
    W = fom.W
    if not np.all(np.isfinite(W)) or not np.all(np.isfinite(fom.L)):
        raise np.linalg.LinAlgError("canonicalize needs finite W and L")
    D, P = np.linalg.eigh(0.5 * (W + W.T))
    S = P.T @ (0.5 * (W - W.T)) @ P
    S = 0.5 * (S - S.T)
    R = P.T @ fom.L
    err = np.abs(P.T @ P - np.eye(P.shape[0])).max()
    if err > 1e-12 * max(1, P.shape[0]):
        raise np.linalg.LinAlgError(f"eigenvectors lost orthogonality ({err:.2e})")
    return D, S, R, P


def canonical_system(D, S, R, force: ForceField) -> FomSystem:
    """Canonical form packaged as a :class:`FomSystem` (``W = diag(D) + S``)."""
    return FomSystem(np.diag(np.asarray(D, dtype=float)) + np.asarray(S, dtype=float), R, force)


def is_stable_continuous(D, tol: float = 0.0) -> bool:
    return bool(np.all(np.asarray(D) <= tol))


def continuous_from_discrete(params: ModelParams):
    """Continuous ``(D, S, R)`` recovered by dividing out the timestep."""
    dt = params.dt
    return params.D / dt, params.S / dt, params.R / dt
