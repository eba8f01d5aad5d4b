"""Residual quantization of embedding vectors into short discrete IDs.

An L-level cascade quantizes each vector, then the residual each level
leaves behind, with either a diagonal-covariance Gaussian mixture or
plain K-means per level.  The package also ships a synthetic-data
evaluation harness, bit-exact file formats, and a batch CLI.
"""

__version__ = "0.1.0"

from .compare import ComparisonReport, compare, match_labels
from .core import Codebook, EmbeddingMatrix, ResidualVector, nearest_code, residual_step
from .errors import (
    DataFormatError,
    DegenerateFitWarning,
    FitError,
    InputError,
    InternalError,
    RqError,
)
from .formats import (
    export_features,
    read_embeddings,
    read_id_table,
    read_model,
    write_embeddings,
    write_id_table,
    write_model,
)
from .gmm import GmmLevel, Responsibilities, em_fit, log_density, map_assign, responsibilities
from .kmeans import FitConfig, KmeansLevel, kmeans_fit, kmeanspp_init
from .pipeline import (
    Method,
    QualityReport,
    RqModel,
    SemanticId,
    convergence_trace,
    encode,
    encode_batch,
    evaluate,
    fit,
    reconstruct,
)
from .synth import GroundTruth, SynthSpec, default_spec, generate

__all__ = [
    "Codebook",
    "ComparisonReport",
    "DataFormatError",
    "DegenerateFitWarning",
    "EmbeddingMatrix",
    "FitConfig",
    "FitError",
    "GmmLevel",
    "GroundTruth",
    "InputError",
    "InternalError",
    "KmeansLevel",
    "Method",
    "QualityReport",
    "Responsibilities",
    "ResidualVector",
    "RqError",
    "RqModel",
    "SemanticId",
    "SynthSpec",
    "compare",
    "convergence_trace",
    "default_spec",
    "em_fit",
    "encode",
    "encode_batch",
    "evaluate",
    "export_features",
    "fit",
    "generate",
    "kmeans_fit",
    "kmeanspp_init",
    "log_density",
    "map_assign",
    "match_labels",
    "nearest_code",
    "read_embeddings",
    "read_id_table",
    "read_model",
    "reconstruct",
    "residual_step",
    "responsibilities",
    "write_embeddings",
    "write_id_table",
    "write_model",
]
