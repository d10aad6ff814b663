"""Heat-flow quantitative differentiation at desk scale.

Modules
-------
spaces      finite-dimensional normed spaces and their geometric invariants
fields      grid-sampled test functions and binary field IO
heat        heat and Poisson evolutes, Taylor approximants
lps         Littlewood-Paley-Stein square functions and martingale checks
dorronsoro  Carleson and local multiscale affine-approximation functionals
spectral    Fourier-side constants of the heat Carleson functional
transport   affine projection on the ball and half-ball Wasserstein distances
cli         command-line front end
"""
__version__ = "0.1.0"

from .fields import AdmissibilityError, GridField, TestFunctionSpec, make_field, make_local_field
from .heat import AffineMap, evolve
from .kernels import BACKEND
from .spaces import InvariantError, InvariantEstimate, NormedSpace

__all__ = ["__version__", "AdmissibilityError", "AffineMap", "BACKEND", "GridField", "InvariantError",
           "InvariantEstimate", "NormedSpace", "TestFunctionSpec", "evolve", "make_field", "make_local_field"]
