"""Exception types shared across the pipeline."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(PipelineError, ValueError):
    """Input data violates a documented contract.

    ``line`` is the 1-based line number of the offending row when the error
    comes from a text table.
    """

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class ArtifactError(PipelineError):
    """A persisted stage artifact is missing or fails its hash check."""


class ConvergenceWarning(UserWarning):
    """An iterative fit stopped before reaching its tolerance."""
