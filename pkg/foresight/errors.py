"""
Exception hierarchy for the foresight self-play package.

Every error raised on purpose by the package derives from ForesightError,
so the command-line layer can turn it into a one-line diagnostic and a
non-zero exit status.
"""


class ForesightError(Exception):
    """Base class for all package errors."""


class ContractViolation(ForesightError):
    """A precondition of an operation was not met by the caller."""


class IllegalActionError(ContractViolation):
    """The chosen action is not legal in the given state."""


class NumericError(ForesightError):
    """Non-finite logits, gradients or parameters."""


class DegenerateRatioError(NumericError):
    """The behaviour policy assigned zero probability to a recorded action."""


class ZeroCountError(ContractViolation):
    """A feature value does not occur in the candidate set."""


class FeatureExhaustedError(ForesightError):
    """The speaker has no unused target feature left."""


class DegenerateInstanceError(ForesightError):
    """A reference-game instance cannot be solved by rational players."""


class ConfigError(ForesightError):
    """Invalid configuration values or inconsistent units."""


class CheckpointError(ForesightError):
    """Checkpoint file is missing, truncated or incompatible."""


class CorpusError(ForesightError):
    """Malformed corpus record, exhausted feature bank or infeasible matrix shape."""
