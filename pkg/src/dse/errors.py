"""Exception hierarchy shared by the library and the CLI."""


class DSEError(Exception):
    """Base class for all simulator errors."""


class InvalidTopologyError(DSEError):
    pass


class ContractViolation(DSEError, ValueError):
    """A documented precondition of an operation does not hold."""


class PartitionError(DSEError):
    pass


class TheoryViolation(DSEError, ValueError):
    """Parameters fall outside the admissible range of a theorem or corollary."""

    def __init__(self, message: str, required: float | int | None = None):
        super().__init__(message)
        self.required = required


class DivergenceError(DSEError, FloatingPointError):
    """A non-finite value appeared in the iterates."""

    def __init__(self, iteration: int, what: str = "parameters"):
        super().__init__(f"non-finite {what} at iteration {iteration}")
        self.iteration = iteration


class ConfigError(DSEError):
    def __init__(self, message: str, problems: list[str] | None = None, line: int | None = None):
        super().__init__(message)
        self.problems = problems or []
        self.line = line


class ArtifactConflict(DSEError, OSError):
    """Refusing to overwrite an artifact whose content differs."""
