"""Observed time series containers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InconsistentDt, TimestampMismatch


@dataclass(frozen=True)
class Series:
    """One observed trajectory; row ``j`` of ``x`` is observed at ``t[j]``."""

    t: np.ndarray
    x: np.ndarray

    def __post_init__(self):
        t = np.array(self.t, dtype=float).reshape(-1)
        x = np.array(self.x, dtype=float)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if x.shape[0] != t.size:
            raise ValueError(f"series has {t.size} timestamps but {x.shape[0]} rows")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)

    @property
    def l(self) -> int:  # noqa: E743
        return self.x.shape[1]

    def __len__(self):
        return self.t.size

    def step_indices(self, dt: float) -> np.ndarray:
        """Integer step index of every row relative to the first timestamp."""
        rel = (self.t - self.t[0]) / dt
        k = np.rint(rel).astype(int)
        bad = np.abs(k * dt - (self.t - self.t[0])) > 1e-9 * np.maximum(1.0, np.abs(self.t))
        if np.any(bad):
            j = int(np.argmax(bad))
            raise TimestampMismatch(f"t[{j}] = {self.t[j]!r} is not a multiple of dt = {dt!r}")
        if np.any(np.diff(k) <= 0):
            raise TimestampMismatch("timestamps must be strictly increasing")
        return k

    def head(self, n_steps) -> "Series":
        """The initial row plus the next ``n_steps`` rows."""
        if n_steps is None:
            return self
        return Series(self.t[:n_steps + 1], self.x[:n_steps + 1])


@dataclass
class Dataset:
    series: list
    dt: float
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.series = [s if isinstance(s, Series) else Series(*s) for s in self.series]
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        ls = {s.l for s in self.series}
        if len(ls) > 1:
            raise ValueError(f"all series must share l, got {sorted(ls)}")

    @property
    def l(self) -> int:  # noqa: E743
        return self.series[0].l if self.series else int(self.metadata.get("l", 0))

    def __len__(self):
        return len(self.series)

    def check_uniform(self):
        for i, s in enumerate(self.series):
            if s.t.size > 1 and np.any(np.abs(np.diff(s.t) - self.dt) > 1e-9):
                raise InconsistentDt(f"series {i} is not sampled at dt = {self.dt!r}")
