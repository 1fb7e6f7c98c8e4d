"""Exception types shared across the package."""


class InvalidArgument(ValueError):
    """A parameter is outside its allowed domain."""


class InconsistentInput(ValueError):
    """Input data violate a physical bound (e.g. |<S_aa>| > 1)."""


class NumericalFailure(ArithmeticError):
    """A linear system or pole was hit exactly (a measure-zero event).

    ``index`` is the realization index when the failure happened inside an
    ensemble run, otherwise ``None``.
    """

    def __init__(self, message, index=None):
        super().__init__(message)
        self.index = index


class DivergentIntegralError(ArithmeticError):
    """The requested saddle-point integral does not converge."""
