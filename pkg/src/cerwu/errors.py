"""Exception hierarchy shared across the package.

``InputError`` subclasses map to CLI exit status 1 (bad user input);
everything else surfacing from the library maps to exit status 2.
"""


class CerwuError(Exception):
    """Base class for all errors raised by this package."""


class InputError(CerwuError):
    """Invalid user-supplied data (shapes, missing entries, bad files)."""


class ShapeError(InputError):
    """Dimension mismatch between related arrays."""


class ParseError(InputError):
    """Malformed container file; message carries the byte offset."""


class FactorizationError(CerwuError):
    """Cholesky factorization failed; raise the damping delta and retry."""


class DecodeError(CerwuError):
    """Entropy-coded payload is truncated or corrupt."""


class SearchSpaceError(InputError):
    """Brute-force enumeration refused: assignment space too large."""
