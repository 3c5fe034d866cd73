"""Exception hierarchy shared by every module of the package."""


class SharpLpError(Exception):
    """Base class for all package errors."""


class InvalidArgument(SharpLpError, ValueError):
    pass


class InvalidData(SharpLpError, ValueError):
    pass


class CapacityError(SharpLpError, MemoryError):
    pass


class ScaleOutOfRange(InvalidArgument):
    def __init__(self, j, j_min, j_max):
        self.j, self.j_min, self.j_max = j, j_min, j_max
        super().__init__(f"scale j={j} outside valid interval [{j_min}, {j_max}]")


class InvalidOperator(SharpLpError, ValueError):
    pass


class DomainError(SharpLpError, ValueError):
    pass


class NumericalFailure(SharpLpError, ArithmeticError):
    def __init__(self, message, residual=None):
        self.residual = residual
        if residual is not None:
            message = f"{message} (residual {residual:.3e})"
        super().__init__(message)


class UnsafeTime(SharpLpError, ValueError):
    """Heat or propagator kernel not localized on the torus (wrap-around) or not resolved."""


class UseNormestBracket(SharpLpError, ValueError):
    pass


class InsufficientSpan(SharpLpError, ValueError):
    pass


class InsufficientDecay(SharpLpError, ValueError):
    pass


class BracketTooWide(SharpLpError, ValueError):
    pass
