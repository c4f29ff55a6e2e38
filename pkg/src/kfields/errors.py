"""Exception types shared across the package."""


class UsageError(ValueError):
    """Bad configuration or unusable input; the CLI maps this to exit 1."""


class SingularSystemError(RuntimeError):
    """Gram factorization failed even after jitter escalation."""


class OpenSurfaceError(RuntimeError):
    """An operation requiring a watertight mesh received an open one."""


class StageError(RuntimeError):
    """A pipeline stage failed; carries the stage name for reporting.
    The CLI maps this to exit 2."""

    def __init__(self, stage, cause):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause
