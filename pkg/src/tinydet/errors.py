"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Tensor extents do not satisfy an operation's dimension contract."""


class ConfigError(ValueError):
    """A configuration is internally inconsistent or arithmetically impossible."""


class DomainError(ValueError):
    """A numeric input lies outside its permitted domain (probabilities, boxes)."""


class CocoParseError(ValueError):
    """An annotation file is malformed or fails referential integrity."""


class GradCheckError(RuntimeError):
    """The gradient-check harness cannot trust its own measurement."""


class TrainingDiverged(RuntimeError):
    """Training produced a non-finite loss."""
