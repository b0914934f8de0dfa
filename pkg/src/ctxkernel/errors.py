"""Exception types raised across the package."""


class CtxKernelError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(CtxKernelError, ValueError):
    """Array or file dimensions disagree with what the caller declared."""


class FeatureRangeError(CtxKernelError, ValueError):
    """A feature value is outside the range the chosen map accepts."""


class UnknownModeError(CtxKernelError, ValueError):
    """The requested feature map mode is not ``linear`` or ``hi``."""


class FormatError(CtxKernelError, ValueError):
    """A binary or text file is corrupt, truncated or of an unknown version."""


class LabelError(CtxKernelError, ValueError):
    """Labels are malformed or unusable for training (e.g. single-sign concept)."""


class StaleMapError(CtxKernelError, ValueError):
    """Map stacks were produced under a different context than the one supplied."""


class DivergenceError(CtxKernelError, ArithmeticError):
    """Training produced a non-finite objective.

    ``state`` holds the last :class:`~ctxkernel.ctxlearn.TrainState` whose
    objective was finite.
    """

    def __init__(self, message, state=None):
        super().__init__(message)
        self.state = state
