"""Exception types raised by the solvers."""

from __future__ import annotations


class NonConvergence(RuntimeError):
    """Implicit stage failed to reach ``newton_tol``; usually ``h`` is too large."""

    def __init__(self, message: str, *, residual: float = float("nan"), step_index: int | None = None):
        self.residual = residual
        self.step_index = step_index
        if step_index is not None:
            message = f"step {step_index}: {message}"
        super().__init__(message)


class LinearSolveFailure(RuntimeError):
    """Krylov solve of a linearized stage stalled (typically Ψ lost positivity)."""

    def __init__(self, message: str, *, step_index: int | None = None):
        self.step_index = step_index
        super().__init__(message)


class DegenerateDensity(RuntimeError):
    """A density estimate evaluated to a negative value at a particle."""
