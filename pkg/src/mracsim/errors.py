"""Exception hierarchy shared across the package."""


class MracSimError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(MracSimError):
    """Operands have incompatible or invalid shapes."""


class RankError(MracSimError):
    """A matrix that must have full column rank does not."""


class AssumptionViolation(MracSimError):
    """The plant/reference pair admits no ideal gain matching (model-matching
    assumption fails beyond tolerance)."""


class ConfigError(MracSimError):
    """A scenario configuration is malformed or violates a load-time invariant."""


class StateCorruptionError(MracSimError):
    """An internal state invariant (e.g. positive adaptation gain) was broken."""


class SingularAdjugateError(MracSimError):
    """The adjugate estimate became singular; gain recovery cannot proceed."""


class IntegrationFault(MracSimError):
    """Integration produced a non-finite derivative or hit an unrecoverable state.

    Attributes:
        time: simulation time at which the fault occurred.
        component: flat state index of the offending component (-1 if n/a).
        partial_trace: trace recorded up to the fault, if any.
    """

    def __init__(self, message, time=None, component=-1, partial_trace=None):
        super().__init__(message)
        self.time = time
        self.component = component
        self.partial_trace = partial_trace
