"""Piecewise ruled surface approximation of triangle meshes."""

__version__ = "0.1.0"

from .mesh import (
    TriangleMesh,
    MeshTransform,
    MeshError,
    MeshParseError,
    MeshTopologyError,
    MeshDegeneracyError,
    load_obj,
    save_obj,
    normalize_unit_diagonal,
)

__all__ = [
    "TriangleMesh",
    "MeshTransform",
    "MeshError",
    "MeshParseError",
    "MeshTopologyError",
    "MeshDegeneracyError",
    "load_obj",
    "save_obj",
    "normalize_unit_diagonal",
    "__version__",
]
