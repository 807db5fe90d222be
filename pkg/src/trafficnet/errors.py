"""Exception types raised by trafficnet."""


class TrafficNetError(Exception):
    pass


class NoCrossing(TrafficNetError):
    """Supply and demand of an ordinary link do not cross exactly once."""


class CycleDetected(TrafficNetError):
    pass


class InversionFailure(TrafficNetError):
    pass


class DegenerateMode(TrafficNetError):
    """Several supply constraints (or the unconstrained branch) tie at a junction."""


class StepRejected(TrafficNetError):
    """An integration step left the domain by more than the clamp threshold."""

    def __init__(self, message, clamp=None, time=None):
        super().__init__(message)
        self.clamp = clamp
        self.time = time


class NotConverged(TrafficNetError):
    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class InadmissibleDemand(TrafficNetError):
    pass


class CertificateFailed(TrafficNetError):
    def __init__(self, message, entries=()):
        super().__init__(message)
        self.entries = list(entries)


class VerificationFailed(TrafficNetError):
    def __init__(self, message, deltas=None):
        super().__init__(message)
        self.deltas = dict(deltas or {})


class ConditionsNotMet(TrafficNetError):
    pass
