"""Exception types raised by the toolkit."""


class VRQLError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(VRQLError, ValueError):
    """Array shapes do not match the MDP they are paired with."""


class ValidationError(VRQLError, ValueError):
    """An MDP, policy or configuration violates its invariants."""


class ConvergenceError(VRQLError, RuntimeError):
    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual={residual:.3e})")
        self.residual = residual


class EnumerationOverflow(VRQLError, RuntimeError):
    def __init__(self, size: int, cap: int):
        super().__init__(
            f"optimal policy set has {size} members, exceeding cap={cap}; raise the cap to enumerate"
        )
        self.size = size
        self.cap = cap


class BudgetError(VRQLError, RuntimeError):
    """A sampler was asked for more draws than its budget allows."""


class ScheduleError(VRQLError, ValueError):
    def __init__(self, message: str, min_feasible_n: int | None = None):
        if min_feasible_n is not None:
            message = f"{message}; smallest feasible budget is n={min_feasible_n}"
        super().__init__(message)
        self.min_feasible_n = min_feasible_n


class DegenerateInstanceError(VRQLError, ValueError):
    """The instance has no noise of the kind a construction perturbs."""


class PreconditionError(VRQLError, ValueError):
    """A documented precondition (e.g. a minimum sample size) is violated."""
