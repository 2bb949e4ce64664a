"""Exception hierarchy shared by all modules."""


class ContractLabError(Exception):
    """Base class for every error raised by the package."""


class ConfigError(ContractLabError):
    pass


class EvaluationError(ContractLabError):
    """A drift or diffusion evaluator returned a non-finite value."""


class DomainError(ContractLabError, ValueError):
    pass


class LinAlgError(ContractLabError):
    pass


class QuadratureError(ContractLabError):
    def __init__(self, message, achieved=None):
        super().__init__(message)
        self.achieved = achieved


class InconclusiveError(ContractLabError):
    """A feasibility margin is too close to zero for the grid to decide."""


class FeasibilityError(ContractLabError):
    pass


class SimulationError(ContractLabError):
    def __init__(self, message, step=None, path=None, time=None):
        super().__init__(message)
        self.step = step
        self.path = path
        self.time = time


class ConvergenceError(ContractLabError):
    def __init__(self, message, gap=None):
        super().__init__(message)
        self.gap = gap


class DivergenceError(ContractLabError):
    pass


class IterationError(ContractLabError):
    pass


class NonContractionError(ContractLabError):
    pass


class DiffeoError(ContractLabError):
    pass


class StageError(ContractLabError):
    """An orchestration stage failed; ``stage`` names it and ``cause`` keeps the original error."""

    def __init__(self, stage, cause):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
