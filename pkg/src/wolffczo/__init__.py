"""Wolff energies, Calderon-Zygmund operators and reflectionless structure on atomic measures."""
from .measure import DomainError, Measure, MeasureSpec, ParameterError, generate
from .lattice import Cube, LatticeView

__all__ = ["Cube", "DomainError", "LatticeView", "Measure", "MeasureSpec", "ParameterError", "generate"]
__version__ = "0.1.0"
