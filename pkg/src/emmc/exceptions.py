"""Exception hierarchy shared by every module.

The CLI maps these onto process exit codes, so raise the most specific one.
"""


class EMMCError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(EMMCError, ValueError):
    """Invalid experiment configuration or command line arguments."""


class DataError(EMMCError, ValueError):
    """Input data violates a precondition (bad CSV, missing class, ...)."""


class NumericError(EMMCError, ArithmeticError):
    """A numerical invariant failed at runtime."""


class SchemaError(DataError):
    """A serialized document does not match the expected schema.

    Parameters
    ----------
    path : str
        Dotted field path to the offending element, e.g. ``gmm.means[1]``.
    message : str
        Human-readable description.
    """

    def __init__(self, path, message):
        self.path = path
        self.detail = message
        super().__init__(f"{path}: {message}" if path else message)
