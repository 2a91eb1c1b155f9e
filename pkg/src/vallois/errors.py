"""Exception types raised by the library."""


class ValloisError(Exception):
    """Base class for library errors."""


class ConfigError(ValloisError, ValueError):
    """Invalid user configuration (bad key, bad value)."""


class NonFiniteDensity(ValloisError):
    """A density evaluated to NaN or infinity."""


class GammaDivergence(ValloisError):
    """The integral defining gamma does not converge at zero."""


class OdeStall(ValloisError):
    """The barrier ODE solver could not make progress."""


class DomainExceeded(ValloisError):
    """A local-time level lies beyond the embedding's domain."""


class EmptySample(ValloisError):
    """No sample points are available for a statistic."""


class NonIncreasingPsi2(ValloisError):
    """delta mu is not positive inside a delta regime."""


class DeltaTailVanishes(ValloisError):
    """The tail of delta mu is not positive inside a delta regime."""


class DegenerateBreakpoint(ValloisError):
    """Two crossings of psi2 and psi1 are too close to tell apart."""


class AssumptionViolation(ValloisError):
    """A pair of marginals does not satisfy the construction's hypotheses."""


class OrderingViolation(ValloisError):
    """A marginal family is not increasing in convex order on the grid."""


class ZeroSpot(ValloisError):
    """The generator is undefined at x = 0."""
