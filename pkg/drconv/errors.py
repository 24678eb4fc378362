class DRConvError(Exception):
    """Base class of every error raised by drconv."""


class ShapeError(DRConvError, ValueError):
    pass


class SizeError(DRConvError, ValueError):
    pass


class NonFiniteError(ShapeError):
    """A tensor holds NaN or infinite values."""


class MaskIndexError(DRConvError, IndexError):
    pass


class ContextError(DRConvError, RuntimeError):
    """A backward context was reused, is stale, or does not match the gradient."""


class ConfigError(DRConvError, ValueError):
    """Invalid configuration; the message starts with the offending field name."""

    def __init__(self, field, message):
        self.field = field
        super().__init__(f"{field}: {message}")


class FormatError(DRConvError, ValueError):
    pass


class VersionError(FormatError):
    pass


class ConsistencyError(DRConvError, ValueError):
    pass


class DivergenceError(DRConvError, ArithmeticError):
    """Training produced a non-finite loss.

    ``last_good`` holds the parameter snapshot taken at the end of the last
    completed epoch (or at initialization).
    """

    def __init__(self, message, last_good=None, epoch=None):
        super().__init__(message)
        self.last_good = last_good
        self.epoch = epoch


class EvaluationError(DRConvError, ArithmeticError):
    pass


class LayerLookupError(DRConvError, KeyError):

    def __init__(self, name, available):
        self.name = name
        self.available = list(available)
        super().__init__(f"unknown layer {name!r}; available: {', '.join(self.available) or '(none)'}")

    def __str__(self):
        return self.args[0]


class DegenerateMaskWarning(UserWarning):
    """A guided mask with fewer than two regions can only ever select region 0."""
