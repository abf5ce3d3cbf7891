"""Errors and warnings raised by wrapgp.

Each error subclasses the builtin that plain numpy code would raise in the same
situation, so ``except ValueError`` style handlers keep working.
"""

__all__ = [
    "ManifoldMismatchError",
    "ManifoldDomainError",
    "ConsistencyError",
    "FactorizationError",
    "MemoryGuardError",
    "NonFiniteObjectiveError",
    "UnsupportedOperationError",
    "ModelStateError",
    "StallWarning",
    "DeskScaleWarning",
    "SphereCutLocusWarning",
]


class ManifoldMismatchError(ValueError):
    """Points, tangent vectors or specs that do not belong together."""


class ManifoldDomainError(ValueError):
    """Input outside the domain of a manifold operation (e.g. antipodal log)."""


class ConsistencyError(RuntimeError):
    """A numerical result violates its own post-condition."""


class FactorizationError(RuntimeError):
    """Cholesky / eigendecomposition failed.

    Parameters
    ----------
    message:
        human readable message
    condition_number:
        2-norm condition number of the offending matrix, if available
    """

    def __init__(self, message: str, condition_number: float = float("nan")):
        super().__init__(f"{message} [cond={condition_number:.3e}]")
        self.condition_number = condition_number


class MemoryGuardError(MemoryError):
    """Dense assembly of a Kronecker covariance above the allowed size."""


class NonFiniteObjectiveError(FloatingPointError):
    """The optimizer met a NaN/inf objective."""

    def __init__(self, message: str, iteration: int):
        super().__init__(f"{message} [iteration={iteration}]")
        self.iteration = iteration


class UnsupportedOperationError(ValueError):
    """Operation not defined for this configuration (e.g. grids with Q != 2)."""


class ModelStateError(RuntimeError):
    """A model is used before it has been trained."""


class StallWarning(UserWarning):
    """The objective did not improve for many consecutive optimizer steps."""


class DeskScaleWarning(UserWarning):
    """Dataset larger than what the dense routines are sized for."""


class SphereCutLocusWarning(UserWarning):
    """Tangent vector at or beyond the cut locus of the sphere."""
