"""Exception types shared across the package."""


class DannlabError(Exception):
    """Base class for all errors raised by dannlab."""


class ShapeError(DannlabError):
    """Array dimensions do not match a layer or model contract."""


class StateError(DannlabError):
    """Operation called in the wrong order (e.g. backward before forward)."""


class BatchError(DannlabError):
    """Batch is unusable (too small or empty)."""


class LabelError(DannlabError):
    """Malformed label encoding (e.g. a one-hot row not summing to 1)."""


class NumericError(DannlabError):
    """Non-finite values where finite numbers are required."""


class SpecError(DannlabError):
    """Network specification violates its structural invariants."""


class InputError(DannlabError):
    """Invalid argument values outside the shape/label categories."""


class DataError(DannlabError):
    """Unreadable or malformed data file."""


class ConfigError(DannlabError):
    """Invalid experiment configuration."""
