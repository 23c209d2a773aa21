"""Tunnel-diode active RIS circuit model, joint MIMO/RIS spectral-efficiency
optimizers, benchmark solvers, and a seeded Monte Carlo experiment harness."""

from .channel import MimoChannels, ScenarioConfig, sample_channels
from .circuit import CellState, CircuitParams
from .reflection import ElementFits, FitParams, RISDesign, fit_amplitude_model

__all__ = [
    "CellState",
    "CircuitParams",
    "ElementFits",
    "FitParams",
    "MimoChannels",
    "RISDesign",
    "ScenarioConfig",
    "fit_amplitude_model",
    "sample_channels",
]

__version__ = "0.1.0"
