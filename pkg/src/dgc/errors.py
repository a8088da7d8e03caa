"""Exception types shared across the package."""

__all__ = [
    "ConfigError",
    "DegenerateHazard",
    "MissingResidual",
    "NonConvergence",
    "ThresholdUndefined",
]


class ConfigError(ValueError):
    """Invalid configuration or state input; carries the offending field path."""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"{field}: {message}")


class NonConvergence(RuntimeError):
    """Two successive quadrature refinements disagree beyond the tolerance."""


class ThresholdUndefined(ValueError):
    """A tail-bound family is not comparable to alpha*y on the tested range."""


class MissingResidual(ConfigError):
    """A defaulted name is present in a state without its frozen residual."""

    def __init__(self, name: int):
        super().__init__(f"residuals[{name}]", "defaulted name has no residual")


class DegenerateHazard(RuntimeError):
    """An intensity denominator vanished (conditioning event has mass zero)."""
