"""
Simulation Errors

Exception hierarchy shared by every module. The CLI maps each class to a
process exit code through its ``exit_code`` attribute.
"""


class SimulationError(Exception):
    """Base class; numerical failures exit with status 3."""
    exit_code = 3


class ConfigError(SimulationError, ValueError):
    """Invalid parameters, unknown config keys or mismatched inputs."""
    exit_code = 2

    def __init__(self, message, key=None, line=None):
        self.key = key
        self.line = line
        if key is not None and line is not None:
            message = f"{message} (key '{key}', line {line})"
        elif key is not None:
            message = f"{message} (key '{key}')"
        super().__init__(message)


class TruncationError(SimulationError):
    """Fock truncation too small for the requested state or spectrum."""


class HermiticityError(SimulationError, ValueError):
    """Operator expected to be Hermitian is not."""


class IntegrationError(SimulationError):
    """Master-equation integration failed."""

    def __init__(self, message, time=None):
        self.time = time
        if time is not None:
            message = f"{message} at t={time:.6g}"
        super().__init__(message)


class PositivityError(IntegrationError):
    """Density matrix left the positive cone beyond tolerance."""


class QuadratureError(SimulationError):
    """Coherence integral did not converge."""

    def __init__(self, message, panel=None):
        self.panel = panel
        if panel is not None:
            message = f"{message} (panel {panel[0]:.6g}..{panel[1]:.6g} rad/s)"
        super().__init__(message)


class LabelingError(SimulationError):
    """Dressed levels could not be matched to their analytic candidates."""


class DrivabilityError(SimulationError):
    """Pulse targets a transition with a vanishing matrix element."""

    def __init__(self, message, element=None):
        self.element = element
        if element is not None:
            message = f"{message} (|<m|sigma|n>| = {abs(element):.3e})"
        super().__init__(message)


class AcceptanceError(SimulationError):
    """One or more --check criteria failed."""
    exit_code = 4
