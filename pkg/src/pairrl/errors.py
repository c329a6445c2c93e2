"""Exception hierarchy shared across the package."""


class PairRLError(Exception):
    """Base class for all package errors."""


class DimensionError(PairRLError, ValueError):
    """Tensor or array shapes are incompatible."""


class NumericError(PairRLError, ArithmeticError):
    """A computation produced NaN or Inf."""


class ContractError(PairRLError, ValueError):
    """A precondition of an operation was violated."""


class ScenarioError(PairRLError, ValueError):
    """A scenario cannot be realised (pools, placement, split discipline)."""


class ConfigError(PairRLError, ValueError):
    """Invalid configuration value."""


class CheckpointError(PairRLError, IOError):
    """Checkpoint file is malformed, truncated or of the wrong version."""
