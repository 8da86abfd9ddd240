"""Exception taxonomy shared by all turbfuse modules."""


class ShapeError(ValueError):
    """Tensor or image dimensions do not satisfy an operation's contract."""


class ContractError(ValueError):
    """An input violates a documented precondition (labels, seeds, ranges)."""


class ConfigError(ValueError):
    """A run configuration is malformed or contains unknown keys."""


class TrainingError(RuntimeError):
    """Training diverged; carries the last good checkpoint when available."""

    def __init__(self, message, step=None, checkpoint=None, history=None):
        super().__init__(message)
        self.step = step
        self.checkpoint = checkpoint
        self.history = history


class DependencyError(RuntimeError):
    """A required upstream artifact is missing; names the command to run."""


class EvaluationError(RuntimeError):
    """A numerical evaluation produced non-finite or unusable results."""
