"""Exception types shared across the package."""


class RWREError(Exception):
    """Base class for every error raised by this package."""


class InvalidDistribution(RWREError, ValueError):
    pass


class NoKappa(RWREError):
    """No positive root of t -> E[rho^t] = 1 exists for the distribution."""


class WindowExhausted(RWREError):
    """A scan ran off the end of the realized window.

    ``partial`` carries whatever was computed before the window ended, so a
    caller can grow the window and retry.
    """

    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


class DegenerateInterval(RWREError, ValueError):
    pass


class ParityMismatch(RWREError, ValueError):
    pass


class InsufficientTail(RWREError):
    pass


class RejectionBudgetExceeded(RWREError):
    pass


class ConfigError(RWREError, ValueError):
    pass
