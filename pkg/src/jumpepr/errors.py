"""Exception hierarchy shared by all modules."""


class JumpEPRError(Exception):
    """Base class for toolkit errors."""

    exit_code = 1

    def to_dict(self):
        return {"error": type(self).__name__, "message": str(self)}


class ConfigurationError(JumpEPRError, ValueError):
    """Invalid or incomplete process specification."""

    exit_code = 2

    def __init__(self, message, key_path=None):
        super().__init__(message if key_path is None else f"{key_path}: {message}")
        self.key_path = key_path

    def to_dict(self):
        out = super().to_dict()
        if self.key_path is not None:
            out["key_path"] = self.key_path
        return out


class AssumptionViolation(JumpEPRError):
    """A standing assumption (positivity, non-degeneracy) fails at an evaluated point."""


class KernelSingularityError(JumpEPRError):
    """Kernel returned NaN or inf outside the excluded diagonal band."""


class KernelPositivityError(JumpEPRError):
    """Kernel is zero one way and positive the other way on a pair that matters."""


class StabilityError(JumpEPRError, ValueError):
    """Time step exceeds the explicit stability bound."""

    def __init__(self, message, bound):
        super().__init__(message)
        self.bound = bound


class InstabilityError(JumpEPRError):
    """Explicit scheme produced significantly negative densities."""


class ResolutionError(JumpEPRError):
    """A quadrature is under-resolved."""


class EmptySupportError(JumpEPRError, ValueError):
    """No samples fall inside the grid domain."""


class DegenerateSampleError(JumpEPRError, ValueError):
    """Samples have zero variance."""


class DivergenceError(JumpEPRError):
    """A simulated state became non-finite."""

    def __init__(self, message, time):
        super().__init__(message)
        self.time = time


class ReversalUndefinedError(JumpEPRError):
    """Reversed dynamics requested where the stationary density is below its floor."""


class FingerprintMismatch(JumpEPRError, ValueError):
    """Paths were generated by a different process specification."""


class EstimateRefused(JumpEPRError):
    """Too many paths were discarded to report an estimate."""


class NonStationaryError(JumpEPRError):
    """Density supplied as stationary fails the stationarity precheck."""

    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual
