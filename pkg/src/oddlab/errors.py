"""Exception hierarchy. The CLI maps these onto exit codes."""


class OddLabError(Exception):
    """Base class for all package errors."""

    exit_code = 3


# configuration / input problems -> exit 2


class ConfigError(OddLabError):
    exit_code = 2


class InvalidParams(ConfigError):
    pass


class InvalidFraction(ConfigError):
    pass


class ParseError(ConfigError):
    pass


class SchemaError(ConfigError):
    pass


class DimMismatch(ConfigError):
    pass


class UnsupportedModel(ConfigError):
    pass


# numerical failures -> exit 3


class NotPositiveDefinite(OddLabError):
    pass


class NoConvergence(OddLabError):
    pass


class NotSeparable(OddLabError):
    pass


class ZeroVector(OddLabError):
    pass


class DegenerateOutput(OddLabError):
    pass


class EmptySamples(OddLabError):
    pass


class EmptyDataset(OddLabError):
    pass


class InsufficientCheckpoints(OddLabError):
    pass
