"""Exception hierarchy shared by every subpackage."""


class MTPNError(Exception):
    """Base class for all errors raised by mtpn."""


class ShapeError(MTPNError, ValueError):
    """An operand has the wrong shape; ``dim`` names the offending dimension."""

    def __init__(self, message, dim=None):
        super().__init__(message)
        self.dim = dim


class PrecisionError(MTPNError, TypeError):
    """Operands disagree on element width, or the width is unsupported."""


class GradientError(MTPNError, RuntimeError):
    """A gradient was requested through a non-differentiable operation."""


class ConfigError(MTPNError, ValueError):
    """A configuration field is missing, unknown or out of range."""

    def __init__(self, message, field=None):
        super().__init__(message)
        self.field = field


class CheckpointError(MTPNError):
    """A checkpoint file is malformed; ``tensor`` names the culprit if known."""

    def __init__(self, message, tensor=None):
        super().__init__(message if tensor is None else f"{message} (tensor {tensor!r})")
        self.tensor = tensor


class DivergenceError(MTPNError, FloatingPointError):
    """Training produced a non-finite loss."""

    def __init__(self, message, epoch):
        super().__init__(f"{message} at epoch {epoch}")
        self.epoch = epoch
