"""Exception and warning types raised across the package."""

from __future__ import annotations


class MascError(Exception):
    """Base class for all errors raised by :mod:`masc`."""

    code = "MascError"


class PanelError(MascError):
    code = "PanelError"


class MissingCell(PanelError):
    code = "MissingCell"


class NonNumeric(PanelError):
    code = "NonNumeric"


class DuplicateCell(PanelError):
    code = "DuplicateCell"


class UnknownColumn(PanelError):
    code = "UnknownColumn"


class UnknownUnit(PanelError):
    code = "UnknownUnit"


class UnknownPeriod(PanelError):
    code = "UnknownPeriod"


class DesignError(MascError):
    """Treated/donor/intervention layout violates a panel invariant."""

    code = "DesignError"


class PredictorError(MascError):
    code = "PredictorError"


class EmptySpecList(PredictorError):
    code = "EmptySpecList"


class WindowCrossesIntervention(PredictorError):
    code = "WindowCrossesIntervention"


class LagBeforeIntervention(PredictorError):
    code = "LagBeforeIntervention"


class ZeroOrNegativeUserWeight(PredictorError):
    code = "ZeroOrNegativeUserWeight"


class EqualPrePostWithoutPostLabels(PredictorError):
    code = "EqualPrePostWithoutPostLabels"


class DimensionMismatch(MascError, ValueError):
    code = "DimensionMismatch"


class PeriodMisalignment(MascError, ValueError):
    code = "PeriodMisalignment"


class TooFewTreated(MascError):
    code = "TooFewTreated"


class NotEstimated(MascError):
    code = "NotEstimated"


class InsufficientUnits(MascError):
    code = "InsufficientUnits"


class DonorPoolTooSmall(MascError):
    code = "DonorPoolTooSmall"


class EmptyWindow(MascError, ValueError):
    code = "EmptyWindow"


class ConfigError(MascError):
    code = "ConfigError"


# Warnings


class MascWarning(UserWarning):
    pass


class NonConvergenceWarning(MascWarning):
    pass


class OverlapWarning(MascWarning):
    pass


class ConstantPredictorWarning(MascWarning):
    pass


class SmallTreatedPoolWarning(MascWarning):
    pass


class PlaceboFailureWarning(MascWarning):
    pass
