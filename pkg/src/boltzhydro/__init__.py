"""boltzhydro: hard-sphere Boltzmann collision machinery, half-space
Navier-Stokes-Fourier solver in vorticity form, and Euler-limit studies."""

from .backend import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
