"""Forward and inverse solvers for the 1-D Dirac system on finite metric trees."""

from diractree.bridge import periodic_grid, response_to_tw, tw_to_response
from diractree.forward_time import ResponseMatrix, TimeGrid, evolve, extract_response, ray_trace_singular
from diractree.halfline import ResponseFunction, recover_potential
from diractree.peeling import ReconstructConfig, compare_reconstruction, peel_sheaf, reconstruct
from diractree.spectral import SpectralGrid, TWSamples, edge_transfer, tw_matrix
from diractree.topology import read_topology
from diractree.tree import (
    Edge,
    EdgePotential,
    MetricTree,
    generate_instance,
    orient_edges,
    path_distance,
    tree_equivalent,
    validate,
)

__version__ = "0.1.0"

__all__ = [
    "Edge",
    "EdgePotential",
    "MetricTree",
    "ReconstructConfig",
    "ResponseFunction",
    "ResponseMatrix",
    "SpectralGrid",
    "TWSamples",
    "TimeGrid",
    "compare_reconstruction",
    "edge_transfer",
    "evolve",
    "extract_response",
    "generate_instance",
    "orient_edges",
    "path_distance",
    "peel_sheaf",
    "periodic_grid",
    "ray_trace_singular",
    "read_topology",
    "reconstruct",
    "recover_potential",
    "response_to_tw",
    "tree_equivalent",
    "tw_matrix",
    "tw_to_response",
    "validate",
]
