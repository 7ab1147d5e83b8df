"""Exception types shared across driftlab."""


class DriftlabError(Exception):
    """Base class; ``exit_code`` is what the CLI returns for it."""

    exit_code = 1


class ConfigError(DriftlabError):
    exit_code = 2


class UnsupportedDimensionError(DriftlabError):
    exit_code = 3


class InsufficientSamplesError(DriftlabError):
    exit_code = 4


class DegenerateDensityError(DriftlabError):
    """log P_t f fell below the log-floor, so the drift is meaningless there."""

    exit_code = 5


class DegeneratePrefixError(DriftlabError):
    """A zero-probability prefix was reached by the cube sampler (a bug)."""

    exit_code = 6
