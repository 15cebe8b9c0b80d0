"""Reconstruction of the initial velocity of a 2-D anisotropic viscous flow from
lateral Neumann data, via a Legendre-exponential time reduction and Picard
iteration on regularised least-squares problems.
"""

from .errors import ConfigurationError, DomainError, NSReconError, ShapeError, SolverError

__version__ = "0.1.0"

__all__ = ["ConfigurationError", "DomainError", "NSReconError", "ShapeError", "SolverError", "__version__"]
