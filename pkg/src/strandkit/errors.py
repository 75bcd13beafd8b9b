"""Exception types shared across the toolkit."""


class StrandKitError(Exception):
    """Base class for all toolkit errors."""


class DegenerateSegment(StrandKitError):
    """Segment endpoints coincide (length below the 1e-6 mm floor)."""


class EmptyTarget(StrandKitError):
    """An operation that needs a non-empty point cloud received an empty one."""


class EmptyGroundTruth(StrandKitError):
    """Metrics require at least one ground-truth strand."""


class DimensionMismatch(StrandKitError):
    """Two maps/images that must share a shape do not."""


class BadKernelParams(StrandKitError):
    """Invalid Gabor kernel parameters (even size, non-positive sigma, ...)."""


class FileFormatError(StrandKitError):
    """Base class for reader errors. Carries a byte or line position."""

    def __init__(self, message: str, position: int | None = None):
        self.position = position
        if position is not None:
            message = f"{message} (at {position})"
        super().__init__(message)


class BadMagic(FileFormatError):
    """File does not start with the expected magic bytes."""


class TruncatedFile(FileFormatError):
    """File ended before the declared payload was complete."""


class FlagMismatch(FileFormatError):
    """Header flags declare arrays the file does not actually contain."""


class ParseError(FileFormatError):
    """Text format violation. `position` is the 1-based line number."""


class ConfigError(StrandKitError):
    """Invalid configuration value (CLI exit code 3)."""
