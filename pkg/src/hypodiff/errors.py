"""Exception types raised across the package."""


class HypodiffError(Exception):
    """Base class for all package errors."""


class ShapeMismatch(HypodiffError):
    pass


class NotPositiveDefinite(HypodiffError):
    def __init__(self, message, block=None, state=None):
        super().__init__(message)
        self.block = block
        self.state = state


class DerivativeInconsistent(HypodiffError):
    def __init__(self, message, name=None, max_rel_dev=None):
        super().__init__(message)
        self.name = name
        self.max_rel_dev = max_rel_dev


class NonFinite(HypodiffError):
    """Simulated trajectory left the region |z| <= 1e12."""

    def __init__(self, message, time=None):
        super().__init__(message)
        self.time = time


class AllEvaluationsRejected(HypodiffError):
    pass


class DimensionTooHigh(HypodiffError):
    pass


class DegenerateMass(HypodiffError):
    pass


class BadInitialPoint(HypodiffError):
    pass


class PathologicalChain(HypodiffError):
    pass


class ExcessivePDFailures(HypodiffError):
    pass


class StageError(HypodiffError):
    """A pipeline stage failed; ``stage`` is the 1-based step index."""

    def __init__(self, stage, block, cause):
        super().__init__(f"stage {stage} ({block}) failed: {cause}")
        self.stage = stage
        self.block = block
        self.cause = cause


class SingularGamma(HypodiffError):
    pass


class RankDeficientHx(HypodiffError):
    pass


class MalformedHeader(HypodiffError):
    pass


class NonEquispaced(HypodiffError):
    pass


class NonNumericCell(HypodiffError):
    def __init__(self, message, row=None, col=None):
        super().__init__(message)
        self.row = row
        self.col = col


class MCFailure(HypodiffError):
    pass
