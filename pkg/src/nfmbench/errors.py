"""Exception types shared by every stage of the pipeline.

The command-line layer maps these onto exit codes: ``ValidationError`` is a
contract violation in otherwise readable inputs (exit 1), ``FileFormatError``
means an artifact on disk is missing, truncated or corrupt (exit 2).
"""


class NFMError(Exception):
    """Base class for all package errors."""


class ValidationError(NFMError, ValueError):
    """Inputs parse but violate an invariant (duplicate ids, id mismatch, ...)."""


class FileFormatError(NFMError, ValueError):
    """An artifact on disk does not conform to its declared format."""
