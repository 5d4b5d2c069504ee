"""Exception hierarchy shared by all modules."""


class MsmSimError(Exception):
    """Base class for every error raised by this package."""


class ScenarioError(MsmSimError, ValueError):
    """A scenario document or object violates the schema or its invariants."""


class UnknownPresetError(ScenarioError, KeyError):
    """Requested built-in scenario does not exist."""

    def __str__(self):  # KeyError would otherwise repr() the message
        return str(self.args[0]) if self.args else ""


class DomainError(MsmSimError, ValueError):
    """A numerical routine received an argument outside its domain."""


class InvalidHazardError(MsmSimError, ValueError):
    """An additive-hazard MSM produced a non-positive hazard."""


class PoolExhaustedError(MsmSimError, RuntimeError):
    """Every match in a pool failed before the sampled individual resolved."""


class EstimationExhaustedError(MsmSimError, RuntimeError):
    """Every simulated individual failed during CDF pre-estimation."""


class MissingGridError(MsmSimError, KeyError):
    """No quantile grid is available for a requested (x, treatment history) key."""

    def __str__(self):
        return str(self.args[0]) if self.args else ""


class PlanningError(MsmSimError, ValueError):
    """An engine cannot be used with the given scenario."""


class ConvergenceError(MsmSimError, RuntimeError):
    """An iterative fit or table construction did not converge."""


class SeparationError(ConvergenceError):
    """A binary-regression fit diverged, indicating (quasi-)separation."""


class RankDeficientError(MsmSimError, ValueError):
    """The design matrix does not have full column rank."""


class UnreliableIntervalError(MsmSimError, RuntimeError):
    """Too many bootstrap replicates failed for the interval to be trusted."""


class SchemaMismatchError(MsmSimError, ValueError):
    """An input table lacks columns required by the requested operation."""
