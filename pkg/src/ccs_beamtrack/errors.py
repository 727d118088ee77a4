"""Exception hierarchy shared across the package.

Every error raised by library code derives from :class:`BeamTrackError`
so callers (and the CLI) can map failures to exit codes without chasing
module-specific types.
"""


class BeamTrackError(Exception):
    """Base class for all package errors."""


# road geometry

class TooFewPoints(BeamTrackError):
    """Fewer than three control points were supplied to the spline fit."""


class DegenerateSegment(BeamTrackError):
    """Two consecutive control points coincide."""


class OutOfRange(BeamTrackError):
    """An arc-length coordinate lies outside the fitted road."""


class OffRoad(BeamTrackError):
    """A Cartesian point projects farther from the centerline than the lane half-width."""


class SingularGeometry(BeamTrackError):
    """Geometry derivatives are undefined (propagation distance ~ 0)."""


# array / channel

class NonPositiveDistance(BeamTrackError):
    """Propagation distance must be strictly positive."""


class DegenerateAngle(BeamTrackError):
    """Angle CRLB is undefined because sin(phi) is (numerically) zero."""


# tracking

class SingularInnovation(BeamTrackError):
    """Innovation covariance is numerically singular; the scenario is mis-specified."""


class BadTransitionMatrix(BeamTrackError):
    """Model transition matrix is not square/row-stochastic/non-negative."""


# beam adaptation

class GammaOutOfRange(BeamTrackError):
    """Misalignment probability target must lie strictly in (0, 1)."""


class NonPsdCovariance(BeamTrackError):
    """A covariance matrix that must be PSD is not."""


# simulation harness

class InsufficientHistory(BeamTrackError):
    """The difference-based baseline needs at least three past positions."""


class NoData(BeamTrackError):
    """Aggregation was requested over zero completed runs."""


# CLI / IO

class UsageError(BeamTrackError):
    """Invalid command-line invocation."""


class IoError(BeamTrackError):
    """A required file is missing or unreadable."""


class SchemaMismatch(BeamTrackError):
    """Summaries being compared do not share a schema."""
