"""Exception hierarchy shared by all tokenmark modules.

Every error raised by the library derives from ``TokenmarkError`` so the CLI
can map any library failure to exit code 2.
"""


class TokenmarkError(Exception):
    """Base class for all tokenmark errors."""


class InvalidInputError(TokenmarkError):
    """A numeric input violates its contract (non-finite logits, bad
    probability vector, out-of-range parameter)."""


class InvalidKeyError(TokenmarkError):
    """Key material violates its invariants (e.g. an unbalanced coloring)."""


class SchemeMismatchError(TokenmarkError):
    """A closed-scheme operation received an open key, or vice versa."""


class CorruptTextError(TokenmarkError):
    """A token sequence or on-disk file is malformed for the given key."""


class ScanBudgetError(TokenmarkError):
    """The exhaustive support scan would exceed its enumeration budget."""


class CheckFailedError(TokenmarkError):
    """A verification oracle's assertion did not hold."""
