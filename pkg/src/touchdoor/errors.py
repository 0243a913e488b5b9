"""Exception types shared across the package."""


class ContractError(ValueError):
    """An operation was called outside its documented contract."""


class ConfigError(ValueError):
    """A run configuration failed schema validation."""


class CalibrationError(RuntimeError):
    """Threshold calibration could not separate loaded from unloaded units."""


class TrainingDiverged(RuntimeError):
    """Non-finite values appeared in gradients or network parameters."""
