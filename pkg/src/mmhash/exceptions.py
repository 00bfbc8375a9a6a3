"""Exception hierarchy for mmhash.

Everything derives from :class:`MMHashError`; data-shaped failures also
derive from :class:`ValueError` so callers can catch them generically.
"""


class MMHashError(Exception):
    """Base class for all mmhash errors."""


class ConfigError(MMHashError, ValueError):
    """Bad hyperparameter configuration."""


class ConfigSyntax(ConfigError):
    """Config file could not be parsed."""


class ConfigInvalid(ConfigError):
    """A config value violates an invariant. ``field`` names the culprit."""

    def __init__(self, field, message=None):
        self.field = field
        super().__init__(message or field)


class DataError(MMHashError, ValueError):
    """Malformed or inconsistent input data."""


class BadMagic(DataError):
    pass


class TruncatedFile(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class EmptyLabelRow(DataError):
    pass


class OverlapQueryRetrieval(DataError):
    pass


class IdOutOfRange(DataError):
    pass


class DimMismatch(DataError):
    pass


class ShapeMismatch(DataError):
    pass


class WidthMismatch(DataError):
    pass


class DuplicateId(DataError):
    pass


class NonIntegralWindow(ConfigError):
    """``lambda * batch_size`` is not a whole number."""


class TrainTooSmall(DataError):
    pass


class RelevantCountMismatch(DataError):
    pass


class ZeroQueries(DataError):
    """No query has a single relevant item in the database."""


class NumericError(MMHashError, ArithmeticError):
    """Training produced a non-finite loss."""
