"""Exception types raised across the package."""


class DyadicLabError(Exception):
    """Base class for all errors raised by dyadic_lab."""


class ModelMismatchError(DyadicLabError, ValueError):
    """Two objects live on different finite models."""


class DegenerateMeasureError(DyadicLabError, ValueError):
    """A cube has zero (or underflowing) measure where a positive one is required."""


class InvalidCubeError(DyadicLabError, ValueError):
    """A cube id is out of range for the model, or not admissible for the operation."""


class InvalidWeightError(DyadicLabError, ValueError):
    """Weight values are not strictly positive and finite."""


class CapacityError(DyadicLabError, ValueError):
    """A requested target cannot be reached at the given depth."""


class UnresolvedBlockError(DyadicLabError, ValueError):
    """A shift block needs refinement deeper than the model provides."""


class ConvergenceError(DyadicLabError, RuntimeError):
    """An iterative solver hit its cap without meeting its certificate."""


class IdentityViolationError(DyadicLabError, AssertionError):
    """An exact algebraic identity failed beyond its tolerance."""


class SizeGuardError(DyadicLabError, ValueError):
    """A dense computation was requested on a model that is too large."""
