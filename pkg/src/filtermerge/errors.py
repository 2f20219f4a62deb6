"""Domain error types.

Raised conditions here are part of the library contract: hitting one signals
a malformed experiment or an input outside an operation's stated domain, not
an internal bug.
"""


class FilterMergeError(Exception):
    """Base class for all domain errors raised by this package."""


class ZeroEvidence(FilterMergeError):
    """An observation has probability zero under the running belief.

    Deliberately an error rather than a silent reset: positive-probability
    observation paths are a standing assumption of every dual-filter
    experiment, so reaching this means the experiment is set up wrong.
    """


class AbsoluteContinuityViolated(FilterMergeError):
    """mu puts mass where nu has none, so dmu/dnu does not exist."""


class SizeCapExceeded(FilterMergeError):
    """A joint observation matrix would exceed the configured column cap."""


class Infeasible(FilterMergeError):
    """No bounded g reproduces the target within the residual tolerance."""

    def __init__(self, message, residual_inf=None, g_sup=None):
        super().__init__(message)
        self.residual_inf = residual_inf
        self.g_sup = g_sup


class NonFiniteMoment(FilterMergeError):
    """A required noise moment is infinite or NaN."""


class SingularDiagonal(FilterMergeError):
    """Some diagonal moment E[a(Z)^k] vanishes; the triangular solve fails."""


class PositivityViolated(FilterMergeError):
    """The noise CDF is (numerically) zero at the left end of the state
    interval, so the integrand 1/Q_cdf blows up."""


class QuadratureNotConverged(FilterMergeError):
    """Successive quadrature refinements failed to agree within tolerance."""


class NonUniqueInvariant(FilterMergeError):
    """Power iteration did not converge to a single stationary distribution."""


class InfiniteInitialDivergence(FilterMergeError):
    """The starting distribution is not absolutely continuous with respect to
    the stationary one, so the divergence curve starts at infinity."""
