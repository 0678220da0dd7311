"""Exception hierarchy shared by all hgfnet modules."""


class HgfnetError(Exception):
    """Base class for every error raised by this package."""


class ShapeError(HgfnetError):
    """Operand shapes are incompatible with the requested operation."""


class DomainError(HgfnetError):
    """A value lies outside the mathematical domain of the operation."""


class TapeError(HgfnetError):
    """The autodiff tape is missing, detached, or lacks required gradients."""


class ConfigError(HgfnetError):
    """A configuration value violates its contract."""


class DataError(HgfnetError):
    """Labels, splits, or sample sets violate their contracts."""


class FormatError(HgfnetError):
    """An on-disk artifact does not match its declared layout."""
