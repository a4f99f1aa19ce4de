"""Exception and warning types shared across modules."""


class BubbleflowError(Exception):
    """Base class for library errors."""


class OutOfChart(BubbleflowError):
    pass


class UnresolvedField(BubbleflowError):
    pass


class NotTangent(BubbleflowError):
    pass


class ProfileInvalid(BubbleflowError):
    pass


class OdeStepFailure(BubbleflowError):
    pass


class MonotonicityLost(BubbleflowError):
    pass


class ChartUnderresolved(BubbleflowError):
    pass


class NoConcentration(BubbleflowError):
    pass


class BelowMuStar(BubbleflowError):
    pass


class ResampleUnderresolved(BubbleflowError):
    pass


class StepCollapse(BubbleflowError):
    pass


class Stalled(BubbleflowError):
    pass


class CoreProtectionViolated(BubbleflowError):
    pass


class DegenerateCorrelation(UserWarning):
    """Emitted when a rotation fit is not unique."""


class Underresolved(UserWarning):
    """Emitted when a sampled model is too sharp for the grid."""
