"""Exception types raised across the package."""


class ConfigError(ValueError):
    """Invalid geometry, preamble or experiment parameters."""


class StructureError(ValueError):
    """A matrix does not have the structure an operation relies on."""

    def __init__(self, message, max_deviation=None):
        super().__init__(message)
        self.max_deviation = max_deviation


class DecompositionError(RuntimeError):
    """A factorization stage failed to reproduce its input."""

    def __init__(self, message, stage=None, residual=None):
        super().__init__(message)
        self.stage = stage
        self.residual = residual


class EstimationError(ValueError):
    """An estimator cannot be formed (rank deficiency, zero pilot, ...)."""
