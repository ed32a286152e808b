"""Exception hierarchy for cookie-walk-lab."""


class CookieWalkError(Exception):
    """Base class for every error raised by the package."""


class InvalidDistributionError(CookieWalkError, ValueError):
    """A jump distribution violates its invariants."""


class InvalidEnvironmentError(CookieWalkError, ValueError):
    """A cookie environment (or a drift computed from one) is inadmissible."""


class PreconditionError(CookieWalkError, ValueError):
    """An operation was called outside its documented domain."""


class InsufficientRenewalsError(CookieWalkError):
    """Too few cut times were detected to form a renewal estimate."""

    def __init__(self, found, required=3):
        self.found = found
        self.required = required
        super().__init__(f"found {found} renewal record(s), need at least {required}")


class NoFrontierError(CookieWalkError):
    """The condition never changes sign on the searched interval."""


class InvalidPathError(CookieWalkError, ValueError):
    """A path is not admissible for the requested operation."""

    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message)


class CensoredRecordError(CookieWalkError):
    """A trigger sequence did not complete before the horizon."""


class CouplingViolationError(CookieWalkError):
    """A coupling produced (or would produce) a pair out of order."""

    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message)


class HypothesisViolationError(CookieWalkError):
    """A sampler broke the hypothesis an oracle relies on."""

    def __init__(self, message, index=None):
        self.index = index
        super().__init__(message)


class ConfigError(CookieWalkError, ValueError):
    """An experiment configuration is invalid."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")
