"""
Errors raised by the laboratory.

Every numerical module raises one of these; only the command line runner
catches them and turns them into an exit status.
"""


class LaboratoryError(Exception):
    """Base class for every error the laboratory raises on purpose."""


class ConfigError(LaboratoryError):
    """A configuration key is unknown, missing or has an unusable value."""

    def __init__(self, message, key_path=None):
        if key_path:
            message = "%s: %s" % (key_path, message)
        super(ConfigError, self).__init__(message)
        self.key_path = key_path


class GridTooCoarse(LaboratoryError):
    """Finite differences of a geometry field disagree with its closed form."""


class UnstableGrid(LaboratoryError):
    """The potential is not resolved by the grid spacing."""


class NotSatisfiable(LaboratoryError):
    """No radius inside the grid satisfies a required lower bound."""


class BranchCut(LaboratoryError):
    """A square root argument touches the negative real axis."""


class NoAdmissibleConstants(LaboratoryError):
    """A constant search over a quadratic form found nothing admissible."""

    def __init__(self, message, best_quotient=None):
        super(NoAdmissibleConstants, self).__init__(message)
        self.best_quotient = best_quotient


class SingularShift(LaboratoryError):
    """The shifted operator H - z is numerically singular."""


class NonConvergent(LaboratoryError):
    """An extrapolation sequence stopped contracting."""


class IllConditioned(LaboratoryError):
    """A boundary-modified system has an unusable condition number."""

    def __init__(self, message, condition_estimate=None):
        super(IllConditioned, self).__init__(message)
        self.condition_estimate = condition_estimate


class StiffRegion(LaboratoryError):
    """No classically allowed radius is left for an outward integration."""


class OriginPassage(LaboratoryError):
    """A classical orbit came too close to the singular origin."""


class Undecided(LaboratoryError):
    """Neither the exponential nor the power growth model fits an orbit."""


class InvalidArgument(LaboratoryError):
    """A subcommand option lies outside the range its operation accepts."""
