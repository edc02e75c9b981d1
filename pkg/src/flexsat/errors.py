"""Exception types shared across the package."""


class FlexsatError(Exception):
    """Base class for all package errors."""


class ConfigError(FlexsatError):
    """Configuration file violates the schema."""


class LabelError(FlexsatError):
    """Unknown, dangling or duplicated channel label."""


class IllPosedError(FlexsatError):
    """Algebraic feedthrough loop is singular."""


class UnstableError(FlexsatError):
    """Operation requires a Hurwitz system and got one that is not."""


class DimensionError(FlexsatError):
    """Matrix or signal dimensions do not match."""


class NotDetectableError(FlexsatError):
    """No stabilizing Riccati solution exists for the given pair."""


class NumericalError(FlexsatError):
    """Iterative solver diverged or lost precision."""


class ModelError(FlexsatError):
    """Physically inconsistent model data (inertia, axes, placement)."""


class AnalysisError(FlexsatError):
    """Invalid analysis request (unknown channel, aliasing, empty grid)."""


class InfeasibleDesignError(FlexsatError):
    """Tuner exhausted its budget without meeting the hard constraints."""
