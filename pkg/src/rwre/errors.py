"""Exception hierarchy shared across the package."""


class RwreError(Exception):
    """Base class for all package errors."""


class ConfigError(RwreError):
    """Malformed configuration or serialized input."""


class MomentDiverges(RwreError):
    """Requested moment order is at or beyond the finiteness boundary."""


class NoPositiveRoot(RwreError):
    """The moment function has no root above zero (no tail index)."""


class NotTransient(RwreError):
    """E log A >= 0, so the walk is not transient to the right."""


class OutOfDomain(RwreError):
    """Argument outside the domain of the rate function or its slope range."""


class WindowDegenerate(RwreError):
    """Deviation window collapses; the threshold is too small for asymptotics."""


class HorizonExceeded(RwreError):
    """Simulation exceeded its step or generation cap before terminating."""


class PopulationOverflow(RwreError):
    """Branching population left the 64-bit integer range."""


class TiltUnavailable(RwreError):
    """No exact sampler for the tilted law and rejection is hopeless."""


class GridUnstable(RwreError):
    """Empirical tail plateau varies too much; the grid is pre-asymptotic."""


class NotStabilized(RwreError):
    """Level-crossing moments did not settle within the requested band."""


class TooFewSamples(RwreError):
    """Not enough (or degenerate) samples for a tail-index estimate."""


class RegimeMismatch(RwreError):
    """Experiment demands a speed/tail regime the environment does not have."""


class ArithmeticSpec(RwreError):
    """Lattice-supported log-multipliers; precise-constant experiments refused."""
