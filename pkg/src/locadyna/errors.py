"""Exception types shared across the package."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


class DatasetError(RuntimeError):
    """A dataset cannot support the requested operation."""


class TrainingError(RuntimeError):
    """Numerical failure during training (non-finite loss etc.)."""


class UnsupportedOperationError(RuntimeError):
    """Operation not defined for the active environment."""
