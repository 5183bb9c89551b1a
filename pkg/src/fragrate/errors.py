"""Exception types raised across the package."""


class FragrateError(Exception):
    """Base class for all package errors."""


class DomainError(FragrateError, ValueError):
    """An argument lies outside the domain of the requested function."""


class QuadratureError(FragrateError):
    """Adaptive quadrature could not reach the requested tolerance."""


class TruncationRequired(FragrateError):
    """Sampling an infinite-activity model requires a positive truncation."""


class RootBracketError(FragrateError):
    """No sign change was found on the search interval."""


class ToleranceError(FragrateError):
    """A sign classification is too close to zero to be trusted."""


class InvariantViolation(FragrateError):
    """A mathematical invariant failed a numerical check."""


class MeshError(FragrateError):
    """Richardson contraction ratio of a scale grid is out of range."""


class SingularTailError(FragrateError):
    """Cell integrals of the Levy tail could not be computed."""


class ScanExhausted(FragrateError):
    """The confinement-rate scan reached q_max without a sign change."""


class PopulationExplosion(FragrateError):
    """The live fragment count exceeded the configured cap."""


class SpineDead(FragrateError):
    """The tagged fragment left the confinement window."""


class InsufficientPoints(FragrateError):
    """Too few usable points for a rate fit."""


class ConfigError(FragrateError):
    """Invalid experiment configuration."""


class AllExtinct(FragrateError):
    """No replica survived to a checkpoint."""


class DegenerateWeights(UserWarning):
    """Importance weights have an effective sample size below 1%."""
