"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes do not fit the operation."""


class ContractError(RuntimeError):
    """A call violated a documented precondition."""


class NonFiniteError(FloatingPointError):
    """A NaN or Inf appeared where only finite values are allowed."""


class UpdateError(FloatingPointError):
    """An optimizer step was asked to apply a non-finite gradient."""


class ConfigError(ValueError):
    pass


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    pass


class TrainingError(RuntimeError):
    pass


class CheckpointError(ValueError):
    pass
