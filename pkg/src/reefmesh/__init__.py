"""reefmesh: progressive triangle-mesh optimisation for game assets.

Decimation, subdivision and detailing, UV atlasing, normal-map baking,
compact binary encoding and surface-distance metrics, driven by a JSON
stage pipeline.
"""

import os

# numba probes TBB first and warns when it is too old; workqueue always exists
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

from .errors import (  # noqa: E402
    AtlasError,
    BakeError,
    DecodeError,
    MeshError,
    NonManifoldError,
    ObjParseError,
    PipelineError,
    ReefError,
)
from .mesh import TriangleMesh, ValidationReport, validate  # noqa: E402

__version__ = "0.1.0"

__all__ = [
    "AtlasError",
    "BakeError",
    "DecodeError",
    "MeshError",
    "NonManifoldError",
    "ObjParseError",
    "PipelineError",
    "ReefError",
    "TriangleMesh",
    "ValidationReport",
    "validate",
]
