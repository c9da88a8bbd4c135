"""Exception hierarchy shared by all modules."""


class ReformChannelsError(Exception):
    """Base class for every error raised by the package."""


class LoadError(ReformChannelsError, ValueError):
    pass


class GroupError(ReformChannelsError, ValueError):
    pass


class MediatorError(ReformChannelsError, ValueError):
    pass


class EstimationError(ReformChannelsError):
    """Raised when a model cannot be estimated on the given sample."""


class SingularDesignError(EstimationError):
    def __init__(self, message, columns=()):
        super().__init__(message)
        self.columns = tuple(columns)


class DegenerateLabelError(EstimationError):
    pass


class NonConvergenceError(EstimationError):
    def __init__(self, message, last_iterate=None, iterations=0):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.iterations = iterations


class SupportError(EstimationError):
    def __init__(self, message, units=()):
        super().__init__(message)
        self.units = list(units)


class TiltingError(EstimationError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals


class InferenceDegradedError(ReformChannelsError):
    def __init__(self, message, dropped=0, replications=0):
        super().__init__(message)
        self.dropped = dropped
        self.replications = replications
