"""Exception hierarchy shared across the package."""


class HashSCDError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInputError(HashSCDError, ValueError):
    """An argument violates an operation's preconditions."""


class FormatError(HashSCDError):
    """A binary file or stream does not conform to its format."""


class BadMagicError(FormatError):
    """File does not start with the expected magic bytes."""


class VersionError(FormatError):
    """File declares an unsupported format version."""


class TruncatedError(FormatError):
    """File ends before its declared payload is complete."""


class DimensionError(FormatError):
    """Header dimensions disagree with expected or actual geometry."""


class ConflictError(HashSCDError):
    """A store write collides with an existing (location, timestamp) key."""


class NotFoundError(HashSCDError, KeyError):
    """A requested key or location does not exist."""
