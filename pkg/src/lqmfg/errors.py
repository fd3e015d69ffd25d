"""Exception types used across the package."""


class ValidationError(ValueError):
    """Rejected input: dimension mismatch or violated model assumption."""


class ConvergenceError(RuntimeError):
    """Iterative solver failed to converge within its iteration budget."""


class AssumptionError(ValueError):
    """Contraction assumption violated (T_P >= 1) or start outside its ball."""


class DivergentSeriesError(ValueError):
    """A matrix power series was requested outside its convergence region."""


class UnstableSystemError(RuntimeError):
    """Closed-loop system is unstable where stability is required."""


class SafeguardRejection(RuntimeError):
    """Actor update rejected (control-block curvature not positive definite)."""


class InnerLoopAborted(RuntimeError):
    """Inner actor-critic loop gave up after repeated safeguard rejections."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or []
