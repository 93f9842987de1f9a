class GainCompError(Exception):
    """Base class for every failure raised by the toolkit."""


class ConfigurationError(GainCompError, ValueError):
    pass


class DimensionMismatchError(ConfigurationError):
    pass


class NonFiniteStateError(GainCompError):
    """Raised when an SDE step produces NaN or inf (usually dt is too large)."""


class AllTrialsAbortedError(GainCompError):
    pass


class GeometryError(GainCompError, ValueError):
    pass


class CornerEventError(GainCompError):
    pass


class SemiclassicalRangeError(GainCompError, ValueError):
    pass


class PatternError(GainCompError, ValueError):
    pass


class PatternFormatError(GainCompError):
    pass
