"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes: input/configuration problems exit 1,
runtime faults (NaN losses, broken artifacts) exit 2.
"""


class MagnisegError(Exception):
    """Base class for all package errors."""


class InputError(MagnisegError, ValueError):
    """Malformed data handed to an operation (wrong shape, bad label, ...)."""


class ConfigurationError(MagnisegError, ValueError):
    """Invalid configuration value or an unsatisfiable run setup."""


class TrainingFault(MagnisegError, RuntimeError):
    """Optimization broke down (non-finite loss). Carries the last good checkpoint."""

    def __init__(self, message, last_checkpoint=None):
        super().__init__(message)
        self.last_checkpoint = last_checkpoint


class ArtifactError(MagnisegError, RuntimeError):
    """A run artifact is missing or incompatible (checkpoint version, files)."""
