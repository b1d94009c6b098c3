"""Exception hierarchy.

Every error raised by the pipeline that an operator may see carries an
``exit_code`` so the CLI can map it without string matching.
"""


class ContractViolation(ValueError):
    """A precondition of a kernel or operation was not met."""

    exit_code = 3


class ZsvadError(Exception):
    exit_code = 1


class ConfigError(ZsvadError):
    exit_code = 2


class DataError(ZsvadError):
    exit_code = 3


class CategoryPoolExhausted(DataError):
    pass


class MetricUndefined(DataError):
    pass


class ProviderError(ZsvadError):
    exit_code = 4


class FixtureNotFound(ProviderError):
    pass


class StageError(ZsvadError):
    """Wraps a failure with the name of the pipeline stage that raised it."""

    def __init__(self, module: str, cause: BaseException):
        self.module = module
        self.cause = cause
        self.exit_code = getattr(cause, "exit_code", 1)
        super().__init__(f"[{module}] {type(cause).__name__}: {cause}")
