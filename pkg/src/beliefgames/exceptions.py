"""Exception types shared across the package."""


class DimensionMismatchError(ValueError):
    """Inputs are inconsistent with the declared joint layout."""


class IllConditionedObservationError(RuntimeError):
    """Innovation covariance H @ Gamma @ H.T + N @ N.T is singular."""


class DifferentiationDomainError(RuntimeError):
    """A function returned non-finite values inside a difference stencil."""


class NonFiniteCostError(RuntimeError):
    """A cost returned a non-finite value during quadratization."""

    def __init__(self, agent: int, stage=None, detail: str = ""):
        self.agent = agent
        self.stage = stage
        where = f"agent {agent}" + ("" if stage is None else f", stage {stage}")
        super().__init__(f"non-finite cost for {where}" + (f": {detail}" if detail else ""))


class StageGameSingularError(RuntimeError):
    """Stacked stationarity system is singular or failed its residual check.

    Retryable: the outer loop raises regularization and solves again.
    """

    def __init__(self, stage=None, message: str = "stage game solve failed"):
        self.stage = stage
        where = "" if stage is None else f" at stage {stage}"
        super().__init__(message + where + "; increase regularization")


class ForwardPassDivergedError(RuntimeError):
    """A rollout produced non-finite beliefs or controls."""


class TrackConstructionError(ValueError):
    """Centerline is degenerate or self-intersecting."""


class ConfigError(ValueError):
    """Invalid run configuration; message names the offending entry."""
