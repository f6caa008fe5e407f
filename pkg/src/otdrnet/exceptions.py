"""Exception hierarchy shared by every otdrnet module."""


class OTDRError(Exception):
    """Base class for all package errors."""


class ConfigError(OTDRError, ValueError):
    """Invalid configuration value."""


class PlacementError(OTDRError, ValueError):
    """Event pulse does not fit inside the trace."""


class ExtractionError(OTDRError, ValueError):
    """Trace cannot supply the requested windows."""


class DataError(OTDRError, ValueError):
    """Malformed or non-finite input data."""


class FormatError(DataError):
    """Unreadable or unsupported on-disk artifact."""


class ShapeError(OTDRError, ValueError):
    """Array shapes do not agree."""


class StateError(OTDRError, RuntimeError):
    """Operation called in the wrong order (e.g. backward before forward)."""


class DomainError(OTDRError, ValueError):
    """Argument outside the mathematical domain of a function."""


class DegenerateTemplateError(OTDRError, ValueError):
    """Template has no energy."""


class CalibrationError(OTDRError, RuntimeError):
    """Threshold calibration is impossible with the given samples."""


class TrainingError(OTDRError, RuntimeError):
    """Training diverged."""

    def __init__(self, message, epoch=None):
        super().__init__(message)
        self.epoch = epoch
