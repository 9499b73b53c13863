"""Exception types shared across the package."""


class ParameterError(ValueError):
    """A parameter vector violates its model's constraint set."""


class DegenerateFilterError(RuntimeError):
    """All particle weights underflowed to zero at some time step.

    Carries the failing time index in ``t``.
    """

    def __init__(self, t: int, message: str | None = None):
        self.t = t
        super().__init__(message or f"particle filter degenerated at t={t}")


class EvidenceUnavailableError(RuntimeError):
    """The observed-information estimate is unusable (indefinite or non-finite)."""


class PenaltyClassificationError(ValueError):
    """Penalty gap is not monotone on the evaluation grid."""
