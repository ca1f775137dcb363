"""Exception classes shared across the package.

Each class carries the process exit code used by the command line front end.
"""


class RotregError(Exception):
    """Base class for errors raised by this package."""

    exit_code = 1


class ConfigError(RotregError):
    """Invalid or unknown configuration."""

    exit_code = 2


class DataError(RotregError):
    """Dataset generation or loading failure."""

    exit_code = 3


class EmptySegmentError(DataError):
    """A point cloud segment ended up with no valid points."""


class CheckpointError(RotregError):
    """Model checkpoint could not be read or is inconsistent."""

    exit_code = 4
