"""Exception types raised across the package."""


class RejectedParametersError(ValueError):
    """Parameters violate a documented precondition."""


class UndecodableInputError(ValueError):
    """A token sequence contains a patch the grammar cannot produce."""


class ParseError(ValueError):
    """Malformed or schema-violating serialized input."""


class InvariantError(ParseError):
    """Serialized object parsed but violates a structural invariant."""


class UnknownPatchError(KeyError):
    """Patch is not in the patch set of the requested level."""


class ShapeError(ValueError):
    """Array argument has the wrong shape."""


class NumericError(ArithmeticError):
    """Non-finite values where finite ones are required."""


class DegenerateNormalizationError(ArithmeticError):
    """``<1, W x>`` too close to zero to normalize the layer output."""


class StepSizeError(RuntimeError):
    """Gradient descent diverged."""


class StageFailureError(RuntimeError):
    """A layerwise training stage could not be completed."""

    def __init__(self, level: int, message: str):
        super().__init__(f"level {level}: {message}")
        self.level = level


class UndefinedModelError(ValueError):
    """A model cannot be fit from the given data (e.g. no samples)."""


class EmptyResultError(ValueError):
    """Refusing to export an empty result."""


class DomainError(ValueError):
    """Input outside the function's domain (e.g. non +-1 boolean input)."""


class AmbiguousSupportError(RuntimeError):
    """Recovered Fourier support violates the disjointness structure."""
