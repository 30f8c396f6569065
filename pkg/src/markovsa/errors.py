"""Exception and warning types shared across the package."""


class ErgodicityError(ValueError):
    """Chain is reducible or periodic, so the invariant law is not unique."""

    def __init__(self, message, classes=None, period=None):
        super().__init__(message)
        self.classes = classes
        self.period = period


class StabilityError(ValueError):
    """A matrix that must be Hurwitz (or a queue load that must be < 1) is not."""

    def __init__(self, message, min_gain=None):
        super().__init__(message)
        self.min_gain = min_gain


class RateDegenerateError(ValueError):
    """Raised when 1/2 I + A is not Hurwitz and no finite Sigma_theta exists."""

    def __init__(self, rho0):
        super().__init__(
            f"1/2 I + A is not Hurwitz (rho0={rho0:.6g}); mean-square error "
            f"decays at rate n^-{2 * rho0:.6g} instead of 1/n"
        )
        self.rho0 = rho0
        self.rate = 2 * rho0


class FinerBoundUnavailable(ValueError):
    """I + A is not Hurwitz, so the n^-2 coefficient is undefined."""


class TruncationError(ValueError):
    def __init__(self, message, required_level):
        super().__init__(message)
        self.required_level = required_level


class DegenerateBasisError(ValueError):
    pass


class SingularGainError(RuntimeError):
    def __init__(self, message, step):
        super().__init__(message)
        self.step = step


class BudgetExceededError(ValueError):
    pass


class ConfigError(ValueError):
    def __init__(self, message, path=""):
        super().__init__(f"{path}: {message}" if path else message)
        self.path = path


class ConditioningWarning(RuntimeWarning):
    pass
