"""Exception hierarchy. Everything raised on purpose derives from FairComposeError."""


class FairComposeError(Exception):
    pass


class SchemaError(FairComposeError):
    """Declared column roles do not match the file."""


class DataError(FairComposeError):
    pass


class SplitError(DataError):
    pass


class ParameterError(FairComposeError, ValueError):
    pass


class MetricError(FairComposeError):
    pass


class FitError(FairComposeError):
    pass


class ThresholdError(FairComposeError):
    pass


class MitigationError(FairComposeError):
    pass


class ExplanationError(FairComposeError):
    pass


class ConfigError(FairComposeError):
    """Invalid or unknown configuration content."""


class CompositionError(ConfigError):
    """More than one intervention of the same stage class."""


class CompatibilityError(ConfigError):
    """Stage choices whose fairness notions contradict each other."""
