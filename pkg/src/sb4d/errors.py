"""Exception hierarchy shared across the package."""


class SB4DError(Exception):
    """Base class for all package errors."""


class ConfigError(SB4DError):
    """A scenario file failed to parse or violated a config invariant."""


class UsageError(SB4DError):
    """Bad command-line invocation."""


class SimulationError(SB4DError):
    """Base class for runtime failures of the forward simulation."""


class OutOfDomainError(SimulationError):
    """A particle left the valid grid interior (one-cell margin)."""

    def __init__(self, particle: int, step: int):
        self.particle = particle
        self.step = step
        super().__init__(f"particle {particle} left the grid interior at step {step}")


class InstabilityError(SimulationError):
    """The simulation blew up: velocity above threshold or det(F) <= 0."""

    def __init__(self, step: int, reason: str):
        self.step = step
        self.reason = reason
        super().__init__(f"unstable at step {step}: {reason}")


class NonFiniteAdjointError(SB4DError):
    """The backward sweep produced a non-finite cotangent."""

    def __init__(self, step: int):
        self.step = step
        super().__init__(f"non-finite adjoint at step {step}")


class InfeasibleError(SB4DError):
    """Optimization hit the iteration cap with constraint violations left."""
