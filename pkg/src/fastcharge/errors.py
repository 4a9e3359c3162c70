"""Exception hierarchy shared by the model, controllers and harness."""


class FastChargeError(Exception):
    """Base class for all package errors."""


class ParameterError(FastChargeError, ValueError):
    """A parameter set or configuration violates its invariants."""


class OcpRangeError(FastChargeError, ValueError):
    """Stoichiometry outside the tabulated open-circuit potential range."""


class SaturationError(FastChargeError, ValueError):
    """Surface concentration at 0 or c_max, where the exchange current vanishes."""


class StateBoundsError(FastChargeError):
    """A state invariant (concentration or temperature bound) was violated."""


class IntegratorError(FastChargeError):
    """The stiff integrator could not complete a step.

    ``last_state`` carries the last accepted sub-step state and ``t_reached``
    the time (relative to the step start) it corresponds to.
    """

    def __init__(self, message, last_state=None, t_reached=0.0):
        super().__init__(message)
        self.last_state = last_state
        self.t_reached = t_reached
