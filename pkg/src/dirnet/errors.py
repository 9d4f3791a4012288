class DirnetError(Exception):
    """Base class for all package errors."""


class ShapeError(DirnetError, ValueError):
    pass


class DomainError(DirnetError, ValueError):
    pass


class IntegrityError(DirnetError):
    pass


class ConfigError(DirnetError, ValueError):
    pass


class FormatError(DirnetError):
    """Malformed or corrupted model file."""


class InputError(DirnetError, ValueError):
    """Token outside the model vocabulary."""
