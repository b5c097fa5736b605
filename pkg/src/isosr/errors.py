"""Exception types shared across the package."""


class IsosrError(Exception):
    """Base class for all package errors."""


class ConfigError(IsosrError):
    """Invalid configuration value (unknown kind, bad range, schema violation)."""


class FormatError(IsosrError):
    """Malformed or truncated file (volume, buffer, or checkpoint)."""


class ShapeError(IsosrError):
    """Tensor/map shape mismatch."""


class TrainingDiverged(IsosrError):
    """Non-finite loss encountered; carries the offending step index."""

    def __init__(self, step: int, value: float):
        super().__init__(f"non-finite loss {value!r} at step {step}")
        self.step = step
        self.value = value
