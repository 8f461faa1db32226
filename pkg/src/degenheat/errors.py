"""Exception types shared across the package."""


class DegenHeatError(Exception):
    """Base class for all package-specific errors."""


class GridError(DegenHeatError, ValueError):
    """Invalid mesh request (too few cells, bad resolution)."""


class DomainError(DegenHeatError, ValueError):
    """Degeneracy exponent outside the weakly degenerate range (0, 1)."""


class RobinParameterError(DegenHeatError, ValueError):
    """Robin coefficients violate beta1 != 0 or beta0*beta1 >= 0."""


class ShapeError(DegenHeatError, ValueError):
    """Field defined on a different grid than the operator expects."""


class ArgumentError(DegenHeatError, ValueError):
    """Arguments violate an operation precondition (ordering, sign, range)."""


class SolverError(DegenHeatError, RuntimeError):
    """Linear solve breakdown or iterative solver non-convergence."""


class CapacityError(DegenHeatError, ValueError):
    """Problem size exceeds what a dense solve is allowed to attempt."""


class SupportError(DegenHeatError, ValueError):
    """Impulse datum has support outside the control region."""


class ZeroStateError(DegenHeatError, ValueError):
    """Operation undefined for an identically zero state."""


class InsufficientDataError(DegenHeatError, ValueError):
    """Not enough samples to evaluate a finite-difference diagnostic."""


class ConstantsError(DegenHeatError, RuntimeError):
    """Constant selection scan exhausted its search range."""


class FitError(DegenHeatError, RuntimeError):
    """Constant fitting impossible on a degenerate training set."""


class ParseError(DegenHeatError, ValueError):
    """Malformed configuration document."""


class ValidationError(DegenHeatError, ValueError):
    """Configuration violates a declared invariant; names the field."""

    def __init__(self, field: str, message: str = ""):
        self.field = field
        super().__init__(f"{field}: {message}" if message else field)
