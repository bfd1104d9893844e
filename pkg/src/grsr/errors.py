"""Exception hierarchy shared by every module."""


class GRSRError(Exception):
    """Base class for all package errors."""


class DimensionError(GRSRError, ValueError):
    pass


class ShapeMismatch(DimensionError):
    pass


class RankDeficient(GRSRError, ValueError):
    pass


class NonFinite(GRSRError, ValueError):
    pass


class NotPositiveDefinite(GRSRError, ValueError):
    pass


class SingularCovariance(GRSRError, ValueError):
    pass


class InvalidHyperparameter(GRSRError, ValueError):
    pass


class InvalidRank(GRSRError, ValueError):
    pass


class RankTooLarge(InvalidRank):
    pass


class DegenerateOperator(GRSRError, ValueError):
    pass


class FamilyMismatch(GRSRError, ValueError):
    pass


class InsufficientDraws(GRSRError, ValueError):
    pass


class CalibrationError(GRSRError, RuntimeError):
    """The GQN generator could not reach its calibration targets."""


class ConfigError(GRSRError, ValueError):
    pass
