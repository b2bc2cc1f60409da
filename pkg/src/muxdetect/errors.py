"""Exception types shared across the package."""


class MuxDetectError(Exception):
    """Base class for user-facing errors (CLI exit code 1)."""


class InvalidInputError(MuxDetectError, ValueError):
    pass


class ShapeError(MuxDetectError, ValueError):
    pass


class ConfigError(MuxDetectError, ValueError):
    pass


class UndefinedMetricError(MuxDetectError, ValueError):
    pass


class IngestError(MuxDetectError):
    """Raised when frame files are missing or unreadable; ``problems`` lists each one."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class TrainingDiverged(MuxDetectError, RuntimeError):
    pass
