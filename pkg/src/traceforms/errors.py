"""Exception types shared across the package."""


class TraceFormsError(Exception):
    """Base class for all errors raised by this package."""


# -- chain construction / validation ----------------------------------------

class ChainValidationError(TraceFormsError):
    """A rate table failed one or more chain invariants.

    ``violations`` lists every failed check so a bad table can be fixed in
    one round trip.
    """

    def __init__(self, message, violations=None):
        super().__init__(message)
        self.violations = list(violations or [])


class SymmetryViolation(ChainValidationError):
    """Detailed balance m(x) Q(x,y) = m(y) Q(y,x) fails; names (x, y)."""


class NegativeRate(ChainValidationError):
    """An off-diagonal rate is negative or a row sum is positive."""


class NotIrreducible(ChainValidationError):
    """The directed graph of positive rates is not strongly connected."""


class SingularKilledGenerator(TraceFormsError):
    """The killed generator block is numerically singular.

    Signals that the chosen boundary set does not absorb the killed chain,
    the discrete analogue of a capacity-zero trace set.
    """


class NotExcessive(TraceFormsError):
    """A vector fails the excessiveness test for the killed chain."""

    def __init__(self, message, states=None):
        super().__init__(message)
        self.states = list(states or [])


class NonMarkovTrace(TraceFormsError):
    """The Schur complement has a negative off-diagonal entry.

    Never expected on a valid symmetric chain; indicates a bug upstream.
    """


class IdentityViolation(TraceFormsError):
    """An exact identity check failed beyond tolerance."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


class NonPositiveDensity(TraceFormsError):
    """A time-change density must be strictly positive."""


# -- lattice construction ----------------------------------------------------

class EmptyTraceSet(TraceFormsError):
    """The trace-set predicate selected no lattice site, or all of them."""


class DegenerateGrid(TraceFormsError):
    """Grid shape or spacing makes no usable lattice."""


# -- Monte Carlo -------------------------------------------------------------

class InsufficientEvents(TraceFormsError):
    """Too few events were observed to report an estimate."""

    def __init__(self, message, n_events=0):
        super().__init__(message)
        self.n_events = n_events


class MaxStepsExceeded(TraceFormsError):
    """A walk failed to terminate within the configured step budget."""


# -- sphere geometry ---------------------------------------------------------

class PointOnBoundary(TraceFormsError):
    """Kernel evaluation point lies on the sphere itself."""


class PointInsideOrOn(TraceFormsError):
    """Escape probability needs a strictly exterior point."""


class CoincidentPoints(TraceFormsError):
    """The boundary kernel diverges on the diagonal."""


class AlphaOutOfRange(TraceFormsError):
    """Stable index must lie in (0, 2)."""


class UnresolvedExpansion(TraceFormsError):
    """Samples cannot be represented by harmonics up to the requested degree."""


class QuadratureTooCoarse(TraceFormsError):
    """Successive quadrature refinements disagree too much to trust."""


class MissingFellerData(TraceFormsError):
    """The prototype energy assembly was not given boundary-kernel data."""


# -- experiment runner -------------------------------------------------------

class ConfigError(TraceFormsError):
    """An experiment configuration is missing or inconsistent."""


class IoError(TraceFormsError):
    """Reading inputs or writing reports failed."""
