"""Boundary-driven Kawasaki lattice gas with reflected Kac interaction.

Exact kinetic Monte Carlo on the cylinder, the matching nonlocal
hydrodynamic solver, and numerical evaluators for the large-deviation
rate functionals of the empirical current and density.
"""

__version__ = "0.1.0"

from .kernels import CosineProfile, KacKernel, QuarticProfile, neumann_kernel
from .lattice import (BoundaryProfile, Configuration, LatticeGeometry,
                      affine_profile, constant_profile, sample_profile,
                      sine_profile)
from .dynamics import TiltFields, exact_generator, simulate, stationary_vector

__all__ = [
    "CosineProfile", "QuarticProfile", "KacKernel", "neumann_kernel",
    "LatticeGeometry", "BoundaryProfile", "Configuration",
    "constant_profile", "affine_profile", "sine_profile", "sample_profile",
    "TiltFields", "simulate", "exact_generator", "stationary_vector",
    "__version__",
]
