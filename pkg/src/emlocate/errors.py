"""Exception types shared across the package.

The CLI maps each family onto an exit code, so keep new errors inside one of
these three branches.
"""


class EmlocateError(Exception):
    """Base class for all package errors."""

    exit_code = 3


class ValidationError(EmlocateError, ValueError):
    """Inputs violate a documented precondition."""

    exit_code = 1


class IncompatibleError(ValidationError):
    """Two objects cannot be combined (different rules, waves, ...)."""


class ParseError(EmlocateError):
    """A text artifact (pattern, scene, manifest) could not be parsed."""

    exit_code = 2

    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}"
        if line is not None:
            where += f":{line}" if where else f"line {line}"
        super().__init__(f"{where}: {message}" if where else message)


class NumericalError(EmlocateError, ArithmeticError):
    """A computation cannot produce a meaningful number."""

    exit_code = 3


class TruncationError(NumericalError):
    """A multipole series did not converge at the requested order."""
