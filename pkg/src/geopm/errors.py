"""Exception hierarchy shared by all geopm modules."""


class GeoPMError(Exception):
    """Base class for every error raised by geopm."""


class InvalidInputError(GeoPMError, ValueError):
    """Input data violates a precondition (coordinates, lengths, files)."""


class InvalidParameterError(GeoPMError, ValueError):
    """A mechanism parameter is out of its admissible range."""


class UnboundedAccuracyError(InvalidParameterError):
    """Accuracy requested at delta = 1, which has no finite bound."""


class NoPredictionError(GeoPMError):
    """The predictor was asked for a prediction on an empty run."""


class BudgetExhaustedError(GeoPMError):
    """The budget manager signalled STOP."""


class EmptyTrajectoryError(InvalidInputError):
    """A parsed trajectory has fewer than two valid fixes."""
