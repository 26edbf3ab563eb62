"""Derivative-free global optimizers over small boxes."""

from .complex import SimplicialComplex, build_complex, extract_pool
from .de import DeConfig, de_minimize
from .delaunay import DegenerateInput, Triangulation, triangulate
from .objective import GlobalResult, ObjectiveHandle, UnitBoxObjective
from .sampling import latin_hypercube, sobol_points
from .shgo import sample_unit_box, shgo_minimize

__all__ = [
    "DeConfig",
    "DegenerateInput",
    "GlobalResult",
    "ObjectiveHandle",
    "SimplicialComplex",
    "Triangulation",
    "UnitBoxObjective",
    "build_complex",
    "de_minimize",
    "extract_pool",
    "latin_hypercube",
    "sample_unit_box",
    "shgo_minimize",
    "sobol_points",
    "triangulate",
]
