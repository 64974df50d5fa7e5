"""Exception hierarchy shared by every module and mapped to CLI exit codes."""


class CifsDipError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigurationError(CifsDipError, ValueError):
    """Invalid shapes, hyperparameters or flag combinations."""

    exit_code = 1


class StateError(CifsDipError, RuntimeError):
    """An object was used out of order (e.g. backward before forward)."""

    exit_code = 1


class InputError(CifsDipError, ValueError):
    """Unsupported or malformed input data."""

    exit_code = 2


class ParseError(InputError):
    """A file could not be parsed. ``where`` names the byte offset or line."""

    def __init__(self, message, where=None):
        if where is not None:
            message = f"{message} (at {where})"
        super().__init__(message)
        self.where = where


class NumericalError(CifsDipError, ArithmeticError):
    """Non-finite values appeared during optimization."""

    exit_code = 3
