"""Exception hierarchy shared across the package."""


class GoalStateError(Exception):
    """Base class for every error raised by this package."""


class SizeMismatch(GoalStateError, ValueError):
    pass


class ShapeMismatch(SizeMismatch):
    pass


class WidthMismatch(GoalStateError, ValueError):
    pass


class DegenerateInput(GoalStateError, ValueError):
    pass


class FormatError(GoalStateError, ValueError):
    """Malformed or truncated file payload."""


class RangeError(GoalStateError, ValueError):
    pass


class StepError(GoalStateError, ValueError):
    pass


class NoContacts(GoalStateError):
    pass


class NoFreePose(GoalStateError):
    pass


class SamplingExhausted(GoalStateError):
    pass


class NoMatchingLink(GoalStateError):
    pass


class NoFeasibleSplit(GoalStateError):
    pass


class ZeroDisplacement(GoalStateError, ValueError):
    pass


class NonFiniteLoss(GoalStateError, FloatingPointError):
    pass
