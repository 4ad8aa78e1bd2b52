"""Exception hierarchy shared by every module."""


class DTSliceError(ValueError):
    """Base class for all simulator errors."""


class MissingField(DTSliceError):
    pass


class UnknownKey(DTSliceError):
    pass


class OutOfRange(DTSliceError):
    pass


class InconsistentTimescales(DTSliceError):
    pass


class BadLadder(DTSliceError):
    pass


class EmptyGroup(DTSliceError):
    pass


class UnassignedUser(DTSliceError):
    pass


class NonMonotonicTimestamp(DTSliceError):
    pass


class TooFewSamples(DTSliceError):
    pass


class UnknownGroup(DTSliceError):
    pass


class UnknownUser(DTSliceError):
    pass


class NoUsers(DTSliceError):
    pass


class GridTooFine(DTSliceError):
    pass


class EmptyDemands(DTSliceError):
    pass


class EmptyMetrics(DTSliceError):
    pass
