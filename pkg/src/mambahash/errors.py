"""Exception hierarchy shared across the package."""


class MambaHashError(Exception):
    """Base class for all package errors."""


class ShapeError(MambaHashError, ValueError):
    """Operand shapes do not conform to an operation's geometry."""


class ContractError(MambaHashError, ValueError):
    """A documented precondition was violated by the caller."""


class ConfigError(MambaHashError, ValueError):
    """Invalid or mismatched model / training configuration."""


class NumericError(MambaHashError, ArithmeticError):
    """A computation produced non-finite values."""


class DataError(MambaHashError, ValueError):
    """Malformed dataset content (labels, manifests, images)."""


class FormatError(MambaHashError, ValueError):
    """A binary file does not follow its declared layout."""
