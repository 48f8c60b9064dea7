"""Exception hierarchy shared by the numerical modules, runner and service.

The command runner maps these onto process exit codes: configuration
problems exit with 2, numerical failures with 3 and I/O errors with 4.
"""


class FewmodeError(Exception):
    """Base class for all errors raised by this package."""


class ConfigurationError(FewmodeError):
    """Invalid configuration, parameters or request shape (exit code 2)."""

    def __init__(self, message, details=None):
        super().__init__(message)
        self.details = list(details) if details else []


class CostGuardError(ConfigurationError):
    """Request exceeds a documented size guard of an expensive routine."""


class UncertifiedModeError(ConfigurationError):
    """Projection modes outside the noise-reachable set were requested."""


class NumericalError(FewmodeError):
    """Numerical failure during integration or assembly (exit code 3)."""


class BlowupError(NumericalError):
    """Non-finite state encountered while stepping a trajectory."""

    def __init__(self, time_index, message=None):
        super().__init__(message or f"non-finite state at time index {time_index}")
        self.time_index = time_index
