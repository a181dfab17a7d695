"""Exception and warning classes.

Every error carries an ``exit_code`` so the CLI can map failures onto
its documented codes (2 config, 3 data, 4 runtime).
"""


class StsirError(Exception):
    exit_code = 4


class ConfigError(StsirError):
    exit_code = 2


class DataError(StsirError):
    exit_code = 3


class RuntimeFailure(StsirError):
    exit_code = 4


# graph
class UnknownAreaId(DataError):
    pass


class SelfLoop(DataError):
    pass


class IslandArea(DataError):
    pass


class IndexOutOfRange(DataError, IndexError):
    pass


# data pipeline
class EmptyDateRange(DataError):
    pass


class NonMonotoneDates(DataError):
    pass


class TooShortSeries(DataError):
    pass


class NegativeLambda(DataError, ValueError):
    pass


class RateOutOfRange(DataError, ValueError):
    pass


class LengthMismatch(DataError, ValueError):
    pass


# models
class UnknownPreset(ConfigError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class IncompatibleData(ConfigError):
    """Preset needs data (predictors, mobility) that was not supplied."""


class NonFiniteLogMean(RuntimeFailure):
    pass


# inference
class PseudoPriorUnset(RuntimeFailure):
    pass


class NonFiniteLikelihoodAtInit(RuntimeFailure):
    pass


class AdaptationDiverged(RuntimeFailure):
    pass


# diagnostics
class TooFewDraws(RuntimeFailure, ValueError):
    pass


class ChainTooShort(RuntimeFailure, ValueError):
    pass


# simulator
class ExplosiveTrajectory(RuntimeFailure):
    pass


# cli
class MixedDataDigests(ConfigError):
    pass


class DepletedSusceptibles(UserWarning):
    """Cells with S = 0 were dropped from the likelihood."""


class DepletedEverywhere(UserWarning):
    """Every area ran out of susceptibles before half of the horizon."""


class DegenerateChain(UserWarning):
    """Geweke z is undefined for a constant chain; 0 is reported."""
