"""Dyadic calculus for multilinear operator-valued singular integrals.

Submodules: lattice (grids and cubes), haar (grid functions and Haar
expansions), spaces (Banach-space models, Rademacher and RM norms),
model_ops (shifts and paraproducts), sparse, rmf (RM maximal functions),
represent (the dyadic representation) and cli.
"""
from . import haar, lattice, model_ops, represent, rmf, spaces, sparse  # noqa: F401

__version__ = "0.1.0"
