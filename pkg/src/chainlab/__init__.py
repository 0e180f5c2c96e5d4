"""Numerical laboratory for an anharmonic oscillator chain with
conservative exchange noise: Gibbs thermodynamics, accelerated SDE
simulation, equilibrium fluctuation fields, a linearized sound-wave
reference solution, and microcanonical geometry tools."""

__version__ = "0.1.0"

from .potential import PotentialSpec  # noqa: F401
from .thermo import CanonicalParams  # noqa: F401
