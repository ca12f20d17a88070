"""Exception types shared across the simulator."""


class SimulationError(Exception):
    """Base class for simulator-specific failures."""


class SingularMatrixError(SimulationError):
    """The conductance matrix read for a solve is singular or numerically singular."""


class NotAnEigenvalueError(SimulationError):
    """The supplied eigenvalue shift is too far from the spectrum of the read matrix."""


class RegisterDecodeError(SimulationError):
    """A register bit pattern does not decode to any supported topology."""


class InstructionDecodeError(SimulationError):
    """A program line or instruction word is malformed."""


class ConfigurationError(SimulationError):
    """An instruction was executed against a macro in an invalid configuration state."""
