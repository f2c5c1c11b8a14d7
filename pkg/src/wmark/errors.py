"""Exception types shared across the package."""


class WmarkError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(WmarkError, ValueError):
    """Array shape does not match what the operation requires."""


class FormatError(WmarkError, ValueError):
    """File content is structurally invalid or of an unsupported kind."""


class NumericError(WmarkError, ValueError):
    """Non-finite values where finite ones are required."""


class ConfigError(WmarkError, ValueError):
    """Invalid or inconsistent configuration."""


class StateError(WmarkError, RuntimeError):
    """Operation called with stale or mismatched cached state."""


class CorruptArtifactError(WmarkError, ValueError):
    """Serialized model artifact failed its integrity check."""


class InfeasibleAlphaError(ConfigError):
    """Requested false-positive level is below what the calibration set size permits.

    Carries ``min_alpha``, the smallest level for which the finite-sample
    guarantee is non-vacuous.
    """

    def __init__(self, alpha: float, min_alpha: float, n: int, delta: float):
        self.alpha = alpha
        self.min_alpha = min_alpha
        self.n = n
        self.delta = delta
        super().__init__(
            f"alpha={alpha:g} is infeasible for n={n} calibration points at "
            f"delta={delta:g}; minimum feasible alpha is {min_alpha:.6g} "
            f"(and at least one order statistic requires alpha >= {min_alpha + 1.0 / n:.6g})"
        )
