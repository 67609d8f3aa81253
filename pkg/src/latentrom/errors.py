"""Exception types raised across the package."""


class LatentRomError(Exception):
    pass


class NumericFailure(LatentRomError):
    """Base for failures of the numerics (as opposed to bad input files)."""


class SingularStep(NumericFailure):
    def __init__(self, message, step_index=None):
        super().__init__(message if step_index is None else f"step {step_index}: {message}")
        self.step_index = step_index


class NonFiniteState(NumericFailure):
    def __init__(self, message, step_index=None):
        super().__init__(message if step_index is None else f"step {step_index}: {message}")
        self.step_index = step_index


class NewtonDiverged(NumericFailure):
    pass


class NonFiniteGradient(NumericFailure):
    pass


class DivergedTraining(NumericFailure):
    def __init__(self, message, iteration):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


class TimestampMismatch(LatentRomError, ValueError):
    pass


class CacheMismatch(LatentRomError, ValueError):
    pass


class EmptySplit(LatentRomError, ValueError):
    pass


class AsymmetricT(LatentRomError, ValueError):
    pass


class CoincidentPoints(NumericFailure):
    pass


class DegenerateEdge(NumericFailure):
    pass


class DegenerateShape(LatentRomError, ValueError):
    pass


class PoleInput(LatentRomError, ValueError):
    pass


class ParseError(LatentRomError, ValueError):
    pass


class InconsistentDt(ParseError):
    pass


class UnstableMatrixWarning(UserWarning):
    pass
