"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes: configuration problems exit
with 2, an aborted search (no detectable signal) with 3, and numerical
failures with 4.
"""

__all__ = ["QalignError", "ConfigError", "CheckpointError", "NumericsError"]


class QalignError(Exception):
    """Base class for package-specific errors."""


class ConfigError(QalignError):
    """Invalid, unknown, or inconsistent configuration input."""


class CheckpointError(QalignError):
    """Checkpoint file is malformed, version-incompatible, or does not
    match the environment it is being restored into."""


class NumericsError(QalignError):
    """A numerical routine left its validity domain (non-finite values,
    failed bracketing, empty spectra)."""
