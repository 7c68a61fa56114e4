"""Exception hierarchy.

Every error raised deliberately by this package derives from
:class:`MediateError` so callers (and the command line layer) can map
failures to exit codes without matching on message text.
"""


class MediateError(Exception):
    """Base class for all errors raised by this package."""


class InvalidInput(MediateError):
    """Malformed argument: wrong shape, non-finite value, bad level, ..."""


class SchemaViolation(InvalidInput):
    """Tabular input or config does not match the declared schema."""


class OrphanRecord(InvalidInput):
    """Longitudinal record references a subject that does not exist."""


class MonotonicityInfeasible(MediateError):
    """Marginal pair admits no monotone joint law (p_min > p_max)."""

    def __init__(self, message, p_min=None, p_max=None, strata=None):
        super().__init__(message)
        self.p_min = p_min
        self.p_max = p_max
        self.strata = strata or []


class InfeasibleStratum(MonotonicityInfeasible):
    """At least one covariate stratum fails the monotone feasibility check."""


class StepMonotonicityInconsistent(MediateError):
    """Marginals are incompatible with the two-band stepwise joint law."""


class UnsupportedDimension(MediateError):
    """Exact vertex enumeration is only provided for small tables."""


class DegenerateRiskSet(MediateError):
    """Risk set empties at time zero; product-limit curve is undefined."""


class NoConvergence(MediateError):
    """Iterative fit exhausted its iteration budget."""

    def __init__(self, message, last_iterate=None, grad_norm=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.grad_norm = grad_norm


class AllDrawsDiscarded(MediateError):
    """Every posterior draw was infeasible; no summary can be formed."""
