"""Exception hierarchy shared across the package."""


class ExtEdError(Exception):
    """Base class for all errors raised by this package."""


class DimensionError(ExtEdError):
    """Array shapes are inconsistent with an operation's contract."""


class ContractError(ExtEdError):
    """An API precondition was violated (stale cache, double scaling, ...)."""


class InputError(ExtEdError):
    """Semantically invalid input: empty sequence, missing record, duplicate id."""


class DataFormatError(ExtEdError):
    """A file does not conform to its documented format."""


class ConfigError(ExtEdError):
    """A run configuration is malformed (unknown key, missing path, bad value)."""


class NumericError(ExtEdError):
    """A non-finite value appeared where the contract requires finite numbers."""
