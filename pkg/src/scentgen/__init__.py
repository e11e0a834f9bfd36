"""Scent-conditioned molecular graph diffusion with validation and sensor selection."""

from .molgraph import Atom, BondType, MoleculeGraph, add_bond, new_graph, pairwise_distance

__version__ = "0.1.0"

__all__ = [
    "Atom",
    "BondType",
    "MoleculeGraph",
    "add_bond",
    "new_graph",
    "pairwise_distance",
    "__version__",
]
