"""Exception types raised by the numerical modules."""


class KPPFrontError(Exception):
    """Base class for computational errors (CLI exit code 1)."""


class NonPositiveMedium(KPPFrontError):
    pass


class ComplexLeakage(KPPFrontError):
    """A transform or eigenpair that should be real carries a non-negligible imaginary part."""


class NoConvergence(KPPFrontError):
    def __init__(self, message, iterations=None):
        super().__init__(message)
        self.iterations = iterations


class SignError(KPPFrontError):
    pass


class SolvabilityViolation(KPPFrontError):
    def __init__(self, component, magnitude):
        super().__init__(
            f"corrector right-hand side {component} is not orthogonal to the "
            f"invariant density (|integral| = {magnitude:.3e})"
        )
        self.component = component
        self.magnitude = magnitude


class NotPositiveDefinite(KPPFrontError):
    pass


class BracketFailure(KPPFrontError):
    pass


class EmptyHalfSphere(KPPFrontError):
    pass


class DomainError(KPPFrontError):
    pass


class ZeroVector(KPPFrontError):
    pass


class StabilityViolation(KPPFrontError):
    pass


class BoundaryContamination(KPPFrontError):
    pass


class IllConditioned(KPPFrontError):
    pass


class DomainExceeded(KPPFrontError):
    pass


class NonPositiveSample(KPPFrontError):
    pass


class WindowTooNarrow(KPPFrontError):
    pass


class ConfigError(Exception):
    """Invalid or unreadable configuration (CLI exit code 2)."""
