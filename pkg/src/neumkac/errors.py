"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the geometric or physical domain."""


class CFLError(ValueError):
    """Requested time step violates the stability bound; carries the bound."""

    def __init__(self, dt, bound):
        super().__init__(f"time step {dt:g} exceeds stability bound {bound:g}")
        self.dt = dt
        self.bound = bound


class StateSpaceError(ValueError):
    """Exact-generator construction refused: state space too large."""


class SolverError(RuntimeError):
    """Iterative solver failed to reach its tolerance; carries diagnostics."""

    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = history if history is not None else []


class MaxPrincipleError(SolverError):
    """Density field left the admissible range during time stepping."""


class PreconditionError(RuntimeError):
    """An operation was called without a required ingredient (e.g. event log)."""
