"""Finite-grid dyadic harmonic analysis for the local Tb theorem."""
from ._backend import BACKEND
from .grid import DyadicCube, GridSpec, Region

__all__ = ["BACKEND", "DyadicCube", "GridSpec", "Region"]
__version__ = "0.1.0"
