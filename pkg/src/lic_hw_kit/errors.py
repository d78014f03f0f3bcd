"""Exception types shared across the toolkit."""


class ToolkitError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(ToolkitError):
    """Tensor or parameter extents do not line up."""


class DomainError(ToolkitError):
    """A numeric argument is outside the domain an operation supports."""


class ParameterError(ToolkitError):
    """Layer or kernel parameters violate a structural constraint."""


class CalibrationError(ToolkitError):
    """Calibration statistics are missing, empty, or inconsistent."""


class PruningError(ToolkitError):
    """A prune request cannot be satisfied without emptying a layer."""


class CurveError(ToolkitError):
    """A rate-distortion curve is unusable (too few points, bad ordering)."""


class NoOverlapError(ToolkitError):
    """Two rate-distortion curves share no common interval."""


class SimulationError(ToolkitError):
    """Scheduler input is inconsistent (partitioning, core counts)."""


class ConfigError(ToolkitError):
    """A run configuration failed schema validation."""


class MissingInputError(ToolkitError):
    """A referenced input file does not exist."""


class FormatError(ToolkitError):
    """Base class for serialization problems."""


class MalformedHeaderError(FormatError):
    """Container header bytes cannot be parsed."""


class TruncatedPayloadError(FormatError):
    """Payload section ends before its declared length."""


class VersionMismatchError(FormatError):
    """Container was written by an incompatible format version."""
