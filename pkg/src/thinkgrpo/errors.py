class ConfigError(ValueError):
    """Invalid configuration or out-of-contract argument."""


class CheckpointError(RuntimeError):
    """Checkpoint is corrupt or incompatible with the active vocabulary."""


class NonFiniteUpdateError(FloatingPointError):
    """A GRPO update produced NaN/Inf parameters and was aborted."""
