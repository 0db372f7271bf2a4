"""Exception types shared across the package."""


class MfgCertError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(MfgCertError):
    """Malformed or invalid run configuration."""


class Theta1NotLessThanOne(MfgCertError):
    """The contraction threshold came out >= 1; carries the offending value."""

    def __init__(self, value):
        self.value = value
        super().__init__(f"theta1 = {value} is not < 1")


class ConstructionFailed(MfgCertError):
    """Constructive parameter search exhausted; carries the last ledger."""

    def __init__(self, message, ledger=None):
        self.ledger = ledger
        super().__init__(message)


class StrictConvexityViolation(MfgCertError):
    """Second p-derivative of the Hamiltonian nonpositive at a sample point."""


class NoConvergence(MfgCertError):
    """Fixed-point iteration failed to reach tolerance."""

    def __init__(self, iterations, residual):
        self.iterations = iterations
        self.residual = residual
        super().__init__(
            f"no convergence after {iterations} iterations (residual {residual:.3e})"
        )


class GridEscape(MfgCertError):
    """Too much probability mass reached the truncated domain boundary."""


class BlowUp(MfgCertError):
    """Riccati coefficient exceeded the blow-up threshold in finite time."""

    def __init__(self, t_blowup):
        self.t_blowup = t_blowup
        super().__init__(f"Riccati blow-up detected at t = {t_blowup:.6f}")
