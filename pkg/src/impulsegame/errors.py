"""Exception types shared across the package."""


class SpecError(ValueError):
    """Problem document violates the schema or a standing assumption."""


class DomainError(ValueError):
    """Argument lies outside its admissible set (state, impulse, node)."""


class SchemeError(RuntimeError):
    """Discretisation produced a non-monotone stencil."""


class ConvergenceError(RuntimeError):
    """Outer fixed point failed to converge; carries the partial field."""

    def __init__(self, message, field=None, history=None):
        super().__init__(message)
        self.field = field
        self.history = history if history is not None else []


class LatticeError(RuntimeError):
    """Moment matching on the oracle lattice is infeasible."""


class StaleFieldError(RuntimeError):
    """Operation requires a converged value field."""
