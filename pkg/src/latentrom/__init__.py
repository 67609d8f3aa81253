"""Stable reduced-order models with learned latent variables.

The model couples observed coordinates ``x`` to latent ones ``z``::

    z' = (D + S) z + R f(x),    x' = R^T z

with ``D`` diagonal and non-positive and ``S`` skew-symmetric, and is
trained in discrete form by backpropagation through a linearized
implicit-midpoint recurrent cell.
"""

__version__ = "0.1.0"

from .bptt import GradientSet, backward, gradient_check, loss, value_and_grad  # noqa: E402
from .cell import CellState, iteration_matrix, predict, rollout, step, step_midpoint_full  # noqa: E402
from .dataset import Dataset, Series  # noqa: E402
from .errors import (  # noqa: E402
    AsymmetricT, CacheMismatch, CoincidentPoints, DegenerateEdge, DegenerateShape, DivergedTraining,
    EmptySplit, InconsistentDt, LatentRomError, NewtonDiverged, NonFiniteGradient, NonFiniteState,
    NumericFailure, ParseError, PoleInput, SingularStep, TimestampMismatch, UnstableMatrixWarning,
)
from .forces import (  # noqa: E402
    RingTopology, bending_ring, compose, force_from_spec, jac_dot, linear_force, spring_ring,
)
from .model_core import (  # noqa: E402
    FomSystem, ForceField, ModelParams, canonical_system, canonicalize, continuous_from_discrete,
    diag_from, is_stable_continuous, skew_from,
)
from .training import TrainConfig, evaluate, split, train  # noqa: E402

__all__ = [
    "__version__",
    "AsymmetricT", "CacheMismatch", "CellState", "CoincidentPoints", "Dataset", "DegenerateEdge",
    "DegenerateShape", "DivergedTraining", "EmptySplit", "FomSystem", "ForceField", "GradientSet",
    "InconsistentDt", "LatentRomError", "ModelParams", "NewtonDiverged", "NonFiniteGradient",
    "NonFiniteState", "NumericFailure", "ParseError", "PoleInput", "RingTopology", "Series",
    "SingularStep", "TimestampMismatch", "TrainConfig", "UnstableMatrixWarning",
    "backward", "bending_ring", "canonical_system", "canonicalize", "compose", "continuous_from_discrete",
    "diag_from", "evaluate", "force_from_spec", "gradient_check", "is_stable_continuous", "iteration_matrix",
    "jac_dot", "linear_force", "loss", "predict", "rollout", "skew_from", "split", "spring_ring", "step",
    "step_midpoint_full", "train", "value_and_grad",
]
