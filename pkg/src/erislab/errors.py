"""Exception types raised across the package."""


class ErisError(Exception):
    """Base class for all package errors."""


class DimensionMismatch(ErisError, ValueError):
    """Operands have incompatible shapes or dimensions."""


class InvalidInput(ErisError, ValueError):
    """A parameter or object violates its documented precondition."""


class ConvergenceError(ErisError, RuntimeError):
    """An iterative routine hit its cap before reaching tolerance.

    This signals a tolerance problem, not a mathematical one.
    """
