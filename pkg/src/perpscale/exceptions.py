"""Exception hierarchy. Each class carries the CLI exit code it maps to."""


class PerpscaleError(Exception):
    exit_code = 1


class DataError(PerpscaleError, ValueError):
    """Malformed input data or arguments that do not fit the data."""

    exit_code = 3


class PerplexityUnderflow(DataError):
    """A scaled perplexity fell to 1 or below, where no neighborhood survives."""


class DivergenceError(PerpscaleError, FloatingPointError):
    """The optimizer produced a non-finite coordinate."""

    exit_code = 4

    def __init__(self, iteration, message=None):
        self.iteration = iteration
        super().__init__(message or f"non-finite embedding coordinate at iteration {iteration}")


class BudgetError(PerpscaleError, MemoryError):
    """A requested computation exceeds the configured memory ceiling."""

    exit_code = 5
