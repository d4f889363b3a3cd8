"""Exception types shared across the package."""


class QuenchpinError(Exception):
    """Base class for all package errors."""


class WindowError(QuenchpinError):
    """A spatial window violates a sampling or coverage precondition."""


class InfeasibleError(QuenchpinError):
    """A parameter search exhausted its grid without satisfying the
    construction inequalities.  Carries the violated constraint names."""

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = violations or []


class CapExceeded(QuenchpinError):
    """No open Lipschitz surface exists below the height cap on this
    finite sample.  ``max_height`` is the largest height any column
    reached before the iteration hit the cap."""

    def __init__(self, max_height, cap):
        super().__init__(
            f"surface iteration exceeded height cap {cap} (reached {max_height})"
        )
        self.max_height = max_height
        self.cap = cap


class ConfigError(QuenchpinError):
    """Malformed or inconsistent experiment configuration."""
