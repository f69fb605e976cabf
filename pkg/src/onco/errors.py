"""Exception types shared across the solver, optimizer and CLI."""


class OncoError(Exception):
    """Base class for all package errors."""


class ConfigError(OncoError):
    """Invalid configuration (bad file, bad key, bad value)."""


class ParseError(ConfigError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ValidationError(ConfigError, ValueError):
    def __init__(self, key, message):
        self.key = key
        super().__init__(f"{key}: {message}")


class SolverError(OncoError):
    """A time integration failed. ``index`` is the offending time level."""

    def __init__(self, message, index=None):
        self.index = index
        if index is not None:
            message = f"{message} (time level {index})"
        super().__init__(message)


class StabilityError(SolverError):
    pass


class NonFiniteError(SolverError):
    pass


class UsageError(OncoError, ValueError):
    pass


class LineSearchFailure(OncoError):
    """No trial step met the sufficient-decrease test; stored on the report."""
