"""Exception types shared across the package."""


class MstageError(Exception):
    """Base class for package errors."""


class ConstructionError(MstageError):
    """Invalid model construction (bad parameters or statistic pairing)."""


class DomainError(MstageError):
    """Parameter outside the model's parameter space."""


class RangeError(MstageError):
    """Requested value outside the attainable range of a transform."""


class NotApplicableError(MstageError):
    """Operation does not apply to this model/statistic combination."""


class TruncatedFeedError(MstageError):
    """A path feed ended before the test could reach a decision."""


class NumericError(MstageError):
    """A numeric routine failed to converge or produced garbage."""


class ConfigError(MstageError):
    """Bad run configuration: the message names the offending key."""


class InfeasibleBudgetError(MstageError):
    """Simulation budget exhausted before a design could be certified.

    Carries the best design found so far in ``best_design`` (may be None).
    """

    def __init__(self, message, best_design=None):
        super().__init__(message)
        self.best_design = best_design
