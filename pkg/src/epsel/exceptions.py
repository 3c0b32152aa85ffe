"""Exception hierarchy shared by all epsel modules."""


class EpselError(Exception):
    """Base class for every error raised by epsel."""


class InvalidDimensionError(EpselError, ValueError):
    pass


class InvalidParameterError(EpselError, ValueError):
    pass


class InvalidVarianceError(InvalidParameterError):
    pass


class UnsupportedShapeError(EpselError, ValueError):
    pass


class DimensionMismatchError(EpselError, ValueError):
    pass


class InvalidSpectrumError(EpselError, ValueError):
    pass


class CovarianceConstructionError(EpselError, ArithmeticError):
    pass


class NumericalFailureError(EpselError, ArithmeticError):
    """A message became non-finite.

    The offending iteration is kept in ``iteration`` so callers (the
    experiment runner in particular) can report where a trial broke down.
    """

    def __init__(self, message, iteration=None):
        if iteration is not None:
            message = f"{message} (iteration {iteration})"
        super().__init__(message)
        self.iteration = iteration


class ConfigValidationError(EpselError, ValueError):
    """Invalid experiment configuration.

    ``errors`` is a list of ``(field, message)`` pairs, one per offending
    field, so the CLI can print all problems at once.
    """

    def __init__(self, errors):
        self.errors = list(errors)
        lines = [f"{field}: {msg}" for field, msg in self.errors]
        super().__init__("invalid configuration:\n  " + "\n  ".join(lines))
