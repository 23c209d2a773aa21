"""Exception hierarchy shared across the package."""


class SimulationError(Exception):
    """Base class for solver and model failures."""


class ConfigError(SimulationError):
    """Invalid or inconsistent configuration input."""


class BracketError(SimulationError):
    """A one-dimensional root search could not bracket a sign change."""


class ConvergenceError(SimulationError):
    """An iterative solver exhausted its iteration budget."""


class InfeasibleBudgetError(SimulationError):
    """The RIS power budget cannot be met even at the lower amplitude bounds."""


class CircuitError(SimulationError):
    """Base class for unit-cell circuit model failures."""


class InfeasiblePhaseError(CircuitError):
    """No real capacitance solves the phase equation for the given resistance."""


class PhaseNotRealizableError(CircuitError):
    """The requested reflection phase lies outside the realizable locus."""


class CapacitanceRangeError(CircuitError):
    """The realizing capacitance falls outside the tunable range."""
