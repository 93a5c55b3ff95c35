"""Exception hierarchy shared by all modules."""


class SvolterraError(Exception):
    pass


class ConfigurationError(SvolterraError, ValueError):
    """Invalid user-supplied parameters (grid sizes, Hurst index, labels, ...)."""


class DomainError(SvolterraError, ValueError):
    """A mathematically undefined request, e.g. a non-integrable cell."""


class ConvergenceError(SvolterraError, RuntimeError):
    """An iteration failed to converge.

    ``record`` carries whatever history the failing routine accumulated
    (series decay record, sweep distances, ...).
    """

    def __init__(self, message, record=None):
        super().__init__(message)
        self.record = record if record is not None else []


class NotInClassError(ConvergenceError):
    """The resolvent series cannot converge: the kernel failed classification."""

    def __init__(self, message, report=None):
        super().__init__(message, record=[])
        self.report = report
