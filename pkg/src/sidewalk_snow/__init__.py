"""Snow-covered sidewalk detection from street-level imagery and sparse reconstructions."""

from .classify import ClassifyParams, Outcome, QueryInput, Verdict, classify, query_from_model
from .colmap import SparseModel, parse_sparse_model
from .evaluation import LabeledQuery, QueryCategory, SweepResult, optimal_band, sweep
from .geometry import Homography, PlaneModel, RigidTransform
from .masks import Category, LabelRaster, PixelSet, load_label_raster
from .sidewalk import BuildParams, SceneDescriptor, SidewalkModel, build_sidewalk_model, load_model, save_model

__version__ = "0.1.0"

__all__ = [
    "BuildParams",
    "Category",
    "ClassifyParams",
    "Homography",
    "LabelRaster",
    "LabeledQuery",
    "Outcome",
    "PixelSet",
    "PlaneModel",
    "QueryCategory",
    "QueryInput",
    "RigidTransform",
    "SceneDescriptor",
    "SidewalkModel",
    "SparseModel",
    "SweepResult",
    "Verdict",
    "build_sidewalk_model",
    "classify",
    "load_label_raster",
    "load_model",
    "optimal_band",
    "parse_sparse_model",
    "query_from_model",
    "save_model",
    "sweep",
]
