"""Fidelity estimation of quantum states with a small neural-network classifier."""

from .errors import ConfigError, DataIntegrityError, FidelityError
from .quantum import DensityMatrix, PauliString, StateVector, fidelity_to_pure, named_state

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataIntegrityError",
    "DensityMatrix",
    "FidelityError",
    "PauliString",
    "StateVector",
    "fidelity_to_pure",
    "named_state",
]
