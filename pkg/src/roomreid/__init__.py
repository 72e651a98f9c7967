"""Model-agnostic room reidentification retrieval engine.

Coarse-to-fine cascade over precomputed features: global cosine retrieval,
object-aware refinement built on Delaunay receptive-field patches and
mutual-nearest-neighbor scoring, then fine-grained keypoint re-ranking.
"""

from .database import ReferenceDatabase, build_database, load_database, save_database, select_reference
from .errors import RoomReidError
from .geometry import AdjacencyMatrix, BoundingBox, PatchBox, Point2
from .manifest import Dataset, load_dataset, write_dataset
from .matching import FeatureVector, MnnMatchSet, SimilarityMatrix
from .pipeline import RetrievalResult, query, query_batch
from .providers import ProviderBundle, default_bundle
from .records import ObjectInstance, SceneRecord
from .scoring import ScoreBreakdown, ScoringConfig
from .synth import SynthSpec

__version__ = "0.1.0"

__all__ = [
    "AdjacencyMatrix",
    "BoundingBox",
    "Dataset",
    "FeatureVector",
    "MnnMatchSet",
    "ObjectInstance",
    "PatchBox",
    "Point2",
    "ProviderBundle",
    "ReferenceDatabase",
    "RetrievalResult",
    "RoomReidError",
    "SceneRecord",
    "ScoreBreakdown",
    "ScoringConfig",
    "SimilarityMatrix",
    "SynthSpec",
    "build_database",
    "default_bundle",
    "load_database",
    "load_dataset",
    "query",
    "query_batch",
    "save_database",
    "select_reference",
    "write_dataset",
]
