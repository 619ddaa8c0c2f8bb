"""Exception hierarchy shared by all popdyn modules."""


class PopdynError(Exception):
    """Base class for every error raised by popdyn."""


class DomainError(PopdynError, ValueError):
    """An argument lies outside the domain where a formula is valid."""


class DegenerateDiscriminantError(DomainError):
    """The WModel discriminant phi**2 is not positive."""


class ParameterError(PopdynError, ValueError):
    """Model parameters violate their invariants."""


class ConfigurationError(PopdynError, ValueError):
    """A simulation or run configuration cannot be realized."""


class DataError(PopdynError, ValueError):
    """Input data is malformed, mismatched or otherwise unusable."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class InsufficientDataError(DataError):
    """Too few points to compute a statistic."""


class FitError(PopdynError, RuntimeError):
    """A model fit could not produce a result."""


class BothFitsFailedError(FitError):
    """Neither the DModel nor the WModel fit succeeded."""

    def __init__(self, dmodel_error, wmodel_error):
        super().__init__(f"DModel fit failed ({dmodel_error}); WModel fit failed ({wmodel_error})")
        self.dmodel_error = dmodel_error
        self.wmodel_error = wmodel_error
