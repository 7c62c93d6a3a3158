"""Exception hierarchy shared by every module."""


class DPReliaError(Exception):
    """Base class for all toolkit errors."""


class InvalidInputError(DPReliaError, ValueError):
    pass


class DegenerateSampleError(DPReliaError, ValueError):
    """Both groups have zero spread, so an effect size is undefined."""


class InfiniteRunsError(DPReliaError, ValueError):
    """A zero effect size cannot be detected with any finite number of runs."""


class AccountingError(DPReliaError, ArithmeticError):
    pass


class CalibrationError(DPReliaError, ValueError):
    pass


class ConfigurationError(DPReliaError, ValueError):
    pass


class SeedPolicyError(ConfigurationError):
    """A fixed seed was supplied for a private run without the unsafe opt-in."""


class DivergedRunError(DPReliaError, FloatingPointError):
    def __init__(self, step: int, message: str = "non-finite parameters"):
        super().__init__(f"{message} at step {step}")
        self.step = step


class PairingError(DPReliaError, ValueError):
    def __init__(self, message: str, orphans_a=(), orphans_b=()):
        super().__init__(message)
        self.orphans_a = list(orphans_a)
        self.orphans_b = list(orphans_b)


class IncompleteGradingError(DPReliaError, ValueError):
    def __init__(self, missing):
        self.missing = sorted(missing)
        super().__init__("missing declared answers: " + ", ".join(self.missing))
