"""ADAM training loop, dataset splitting, initialization and evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .bptt import GradientSet, loss, value_and_grad
from .cell import predict
from .dataset import Dataset, Series
from .errors import DivergedTraining, EmptySplit, NumericFailure
from .model_core import ForceField, ModelParams, is_stable_continuous

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    latent_dim: int = 8
    learning_rate: float = 1e-2
    max_iterations: int = 1000
    batch_mode: str = "full"
    seed: int = 0
    train_steps: Optional[int] = 15
    split_ratios: tuple = (0.7, 0.2, 0.1)
    init_scheme: str = "glorot"
    init_gain: float = 1.0
    adam_hyper: tuple = (0.9, 0.999, 1e-8)
    gradient_mode: str = "exact"
    patience: int = 200
    min_delta: float = 1e-10
    cell: str = "midpoint-stable"
    use_z0: bool = False
    learn_z_init: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        self.split_ratios = tuple(float(r) for r in self.split_ratios)
        if len(self.split_ratios) != 3 or abs(sum(self.split_ratios) - 1.0) > 1e-9:
            raise ValueError(f"split_ratios must be three numbers summing to 1, got {self.split_ratios}")
        if min(self.split_ratios) < 0:
            raise ValueError("split ratios must be non-negative")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.train_steps is not None and self.train_steps < 1:
            raise ValueError("train_steps must be at least 1")
        if self.latent_dim < 1:
            raise ValueError("latent_dim must be at least 1")
        if self.batch_mode not in ("full", "per-series"):
            raise ValueError(f"batch_mode must be 'full' or 'per-series', got {self.batch_mode!r}")
        if self.init_scheme not in ("glorot", "boundary"):
            raise ValueError(f"init_scheme must be 'glorot' or 'boundary', got {self.init_scheme!r}")
        if not self.init_gain > 0:
            raise ValueError("init_gain must be positive")
        if self.gradient_mode not in ("exact", "approximate"):
            raise ValueError(f"gradient_mode must be 'exact' or 'approximate', got {self.gradient_mode!r}")


def glorot(rng, shape) -> np.ndarray:
    a = np.sqrt(6.0 / (shape[0] + shape[1]))
    return rng.uniform(-a, a, size=shape)


def init_params(config: TrainConfig, l: int, dt: float, rng) -> ModelParams:  # noqa: E741
    """Glorot-uniform ``C`` and ``R``.

    ``theta_d`` is Glorot-uniform as a ``p x 1`` matrix under the default
    scheme and zero (``D = 0``) under ``init_scheme='boundary'``. Note
    that ``D = -theta**2`` has zero gradient at ``theta = 0``, so the
    boundary scheme never learns any dissipation. Every draw is multiplied
    by ``init_gain``; since the discrete matrices absorb ``dt``, a gain
    below one starts the model at slower continuous rates.
    """
    p = config.latent_dim
    g = config.init_gain
    C = g * glorot(rng, (p, p))
    R = g * glorot(rng, (p, l))
    if config.init_scheme == "glorot":
        theta_d = g * glorot(rng, (p, 1)).reshape(-1)
    else:
        theta_d = np.zeros(p)
    return ModelParams(
        theta_d=theta_d, C=C, R=R, dt=dt,
        z0=np.zeros(p) if config.use_z0 else None,
        z_init=np.zeros(p) if config.learn_z_init else None,
        cell=config.cell,
    )


def split(dataset: Dataset, ratios=(0.7, 0.2, 0.1), rng=None):
    """Shuffle the series and partition them into train/val/test datasets."""
    n = len(dataset.series)
    ratios = tuple(float(r) for r in ratios)
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError("ratios must sum to 1")
    n_train = int(round(ratios[0] * n))
    n_val = int(round(ratios[1] * n))
    n_val = min(n_val, n - n_train)
    counts = (n_train, n_val, n - n_train - n_val)
    for name, r, c in zip(("train", "validation", "test"), ratios, counts):
        if r > 0 and c == 0:
            raise EmptySplit(f"{n} series leave the {name} split empty at ratio {r}")
    order = np.arange(n) if rng is None else rng.permutation(n)
    bounds = np.cumsum((0,) + counts)
    parts = []
    for k in range(3):
        idx = order[bounds[k]:bounds[k + 1]]
        meta = dict(dataset.metadata, split=("train", "val", "test")[k], series_index=[int(i) for i in idx])
        parts.append(Dataset([dataset.series[i] for i in idx], dataset.dt, meta))
    return tuple(parts)


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def zeros(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(params: ModelParams, grads: GradientSet, moments: AdamState, learning_rate: float,
              hyper=(0.9, 0.999, 1e-8)):
    """One bias-corrected ADAM update of the unconstrained parameter vector."""
    beta1, beta2, eps = hyper
    g = grads.to_vector()
    t = moments.t + 1
    m = beta1 * moments.m + (1.0 - beta1) * g
    v = beta2 * moments.v + (1.0 - beta2) * (g * g)
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    new = params.to_vector() - learning_rate * m_hat / (np.sqrt(v_hat) + eps)
    return params.from_vector(new), AdamState(m, v, t)


@dataclass
class TrainHistory:
    records: list = field(default_factory=list)
    best_iteration: int = 0
    stopped_early: bool = False
    splits: tuple = ()

    def __len__(self):
        return len(self.records)

    def __getitem__(self, i):
        return self.records[i]

    def column(self, name) -> np.ndarray:
        return np.array([r[name] for r in self.records])


def train(config: TrainConfig, dataset: Dataset, force: ForceField, splits=None):
    """Fit a model by ADAM on the truncated training series.

    ``splits`` may pass an explicit ``(train, val, test)`` triple; by
    default the dataset is split with ``config.split_ratios`` using the
    seed. Returns the parameters with the lowest validation loss (the
    training loss when there is no validation series) and the history.
    """
    if not dataset.series:
        raise EmptySplit("dataset has no series")
    rng = np.random.default_rng(config.seed)
    if splits is None:
        splits = split(dataset, config.split_ratios, rng)
    train_set, val_set, _ = splits
    if not train_set.series:
        raise EmptySplit("training split is empty")
    params = init_params(config, dataset.l, dataset.dt, rng)
    moments = AdamState.zeros(params.to_vector().size)
    history = TrainHistory(splits=splits)
    n_steps = config.train_steps
    order = rng.permutation(len(train_set.series))

    best, best_val, since_best = params, np.inf, 0
    t0 = time.perf_counter()
    for it in range(config.max_iterations + 1):
        if config.batch_mode == "full":
            batch = train_set.series
        else:
            batch = [train_set.series[order[it % len(order)]]]
        try:
            train_loss, grads = value_and_grad(params, force, batch, n_steps, config.gradient_mode, config.n_jobs)
            val_loss = loss(params, force, val_set.series, n_steps) if val_set.series else train_loss
        except NumericFailure as exc:
            raise DivergedTraining(str(exc), it) from exc
        if not (np.isfinite(train_loss) and np.isfinite(val_loss)):
            raise DivergedTraining("loss became non-finite", it)
        history.records.append({
            "iteration": it, "train_loss": train_loss, "val_loss": val_loss,
            "wall_time": time.perf_counter() - t0,
        })
        if val_loss < best_val - config.min_delta:
            best, best_val, since_best = params, val_loss, 0
            history.best_iteration = it
        else:
            since_best += 1
            if since_best >= config.patience:
                history.stopped_early = True
                break
        if it == config.max_iterations:
            break
        params, moments = adam_step(params, grads, moments, config.learning_rate, config.adam_hyper)
        if params.constrained:
            assert is_stable_continuous(params.D)
        if log.isEnabledFor(logging.DEBUG) and it % 100 == 0:
            log.debug("iteration %d train %.3e val %.3e", it, train_loss, val_loss)
    return best, history


def relative_l2(pred, true) -> float:
    """``||pred - true|| / ||true||`` over whole arrays (0 when both vanish)."""
    num = float(np.sum((np.asarray(pred) - np.asarray(true)) ** 2))
    den = float(np.sum(np.asarray(true) ** 2))
    if den == 0.0:
        return 0.0 if num == 0.0 else float("inf")
    return float(np.sqrt(num / den))


def compare(preds, truths) -> dict:
    """Error metrics between predicted and true trajectories.

    Both are sequences of ``(H + 1, l)`` arrays whose first row is the
    shared initial condition; row 0 is excluded from every metric.
    """
    P = np.stack([np.asarray(p)[1:] for p in preds])
    X = np.stack([np.asarray(x)[1:] for x in truths])
    err = np.sum((P - X) ** 2, axis=2)  # series x steps
    ref = np.sum(X ** 2, axis=2)
    num, den = err.sum(axis=0), ref.sum(axis=0)
    with np.errstate(divide="ignore", invalid="ignore"):
        per_step = np.where(den > 0, np.sqrt(num / den), np.where(num > 0, np.inf, 0.0))
    return {
        "per_step_rel_error": per_step,
        "rel_l2_error": relative_l2(P, X),
        "rmse": float(np.sqrt(err.mean())),
        "final_state_error": float(np.mean(np.sqrt(err[:, -1]))),
    }


def evaluate(params: ModelParams, force: ForceField, dataset, horizon: int) -> dict:
    """Roll out from each series' first row and compare ``horizon`` steps."""
    series = dataset.series if isinstance(dataset, Dataset) else list(dataset)
    if isinstance(dataset, Series):
        series = [dataset]
    for s in series:
        if len(s) < horizon + 1:
            raise ValueError(f"horizon {horizon} exceeds the {len(s) - 1} available steps")
    preds = [predict(params, force, s.x[0], horizon) for s in series]
    metrics = compare(preds, [s.x[:horizon + 1] for s in series])
    metrics["predictions"] = preds
    return metrics


def write_history(history: TrainHistory, path, header_comment: str | None = None) -> None:
    lines = []
    if header_comment:
        lines += ["# " + ln for ln in header_comment.splitlines()]
    lines.append("iteration train_loss val_loss wall_time_seconds")
    for r in history.records:
        lines.append(f"{r['iteration']} {r['train_loss']:.17g} {r['val_loss']:.17g} {r['wall_time']:.6f}")
    Path(path).write_text("\n".join(lines) + "\n")
