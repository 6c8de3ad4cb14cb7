"""Exception hierarchy.

Every error raised by the package derives from :class:`FCMError`.  The
``family`` attribute groups errors for the command line exit codes.
"""


class FCMError(Exception):
    family = "numerical"


class InvalidArgumentError(FCMError, ValueError):
    family = "config"


class FormatError(FCMError, ValueError):
    family = "io"


class DegenerateDataError(FCMError):
    pass


class DegenerateMatrixError(FCMError):
    pass


class NumericalBreakdownError(FCMError):
    def __init__(self, message, block=None):
        super().__init__(message)
        self.block = block


class IllConditionedError(FCMError):
    def __init__(self, message, smallest_pivot=None):
        super().__init__(message)
        self.smallest_pivot = smallest_pivot


class DegenerateUpdateError(FCMError):
    pass


class SimulationBlowupError(FCMError):
    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


class InvalidRegionError(FCMError):
    family = "config"


class NonconvergenceError(FCMError):
    pass


class RankDeficientError(FCMError):
    pass
