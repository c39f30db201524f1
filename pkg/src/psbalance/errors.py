"""Exception hierarchy shared by all psbalance modules.

Three branches map onto the CLI exit codes: ConfigError (2), NumericalError (3)
and DataError (4).
"""


class PsbalanceError(Exception):
    """Base class for all errors raised by this package."""


class ConfigError(PsbalanceError):
    """Invalid configuration: bad parameters, unknown columns, unsupported combinations."""


class DataError(PsbalanceError):
    """Input data violates a hard requirement."""


class NumericalError(PsbalanceError):
    """A numerical procedure failed (non-convergence, singularity, infinite weights)."""


# -- data validation ---------------------------------------------------------

class MissingColumn(DataError):
    pass


class NonBinaryTreatment(DataError):
    pass


class NonFiniteValue(DataError):
    pass


class DegenerateTreatment(DataError):
    pass


# -- scheme / design configuration -------------------------------------------

class ParamOutOfRange(ConfigError):
    pass


class MissingParam(ConfigError):
    pass


class ExtraneousParam(ConfigError):
    pass


class UnknownColumn(ConfigError):
    pass


class DimensionMismatch(ConfigError):
    pass


class UnsupportedScheme(ConfigError):
    """Scheme has no smooth weight gradient; use the bootstrap variance instead."""


class SchemeNotAffine(ConfigError):
    """The doubly-robust form requires an affine selection function (IPW/ATT/ATC)."""


# -- numerical failures -------------------------------------------------------

class SingularDesign(NumericalError):
    pass


class NonConvergence(NumericalError):
    """Iteration cap reached or quasi-separation detected.

    Carries the last iterate so callers can inspect the failed fit.
    """

    def __init__(self, message, last_beta=None, scores=None, score_norm=None):
        super().__init__(message)
        self.last_beta = last_beta
        self.scores = scores
        self.score_norm = score_norm


class ArmTooSmall(NumericalError):
    pass


class InfiniteWeight(NumericalError):
    """A weight evaluated to a non-finite value; carries the offending row indices."""

    def __init__(self, message, rows=None):
        super().__init__(message)
        self.rows = tuple(rows) if rows is not None else ()


class EmptyEffectiveArm(NumericalError):
    pass


class AllZeroSelection(NumericalError):
    pass


class SingularBread(NumericalError):
    pass


class TooManyFailedResamples(NumericalError):
    pass


class AllReplicatesFailed(NumericalError):
    pass


class ZeroVariance(NumericalError):
    pass
