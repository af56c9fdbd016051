"""Semantic slider control for linear-blendshape morphable models.

The pipeline: sample a parametric model and render the meshes
(`dataset`), score the renders against word descriptors in a shared
image/text embedding space (`scoring`), reduce the descriptors to a small
decorrelated subset (`selection`), train a network mapping score vectors to
model coefficients (`mapper`), and evaluate or serve it (`evaluation`,
`service`, `cli`).
"""

from .morphable import (
    Family,
    Mesh,
    MorphableModel,
    load_model,
    sample_coefficients,
    save_model,
    synthesize,
)
from .rendering import CameraView, RenderConfig, SoftwareRasterizer, default_views
from .dataset import CoefficientTable, DatasetManifest, build_dataset, render_views
from .scoring import (
    Descriptor,
    ScoreTable,
    SyntheticScorerBackend,
    descriptors_from_words,
    score,
    score_dataset,
)
from .selection import (
    DescriptorSelector,
    Lexicon,
    SelectionResult,
    SilhouetteKMeans,
    assign_descriptors_to_clusters,
    cluster_images,
    correlation_matrix,
    select,
)
from .mapper import (
    MapperArtifact,
    MapperConfig,
    ScoreToCoefficientMapper,
    predict,
    slider_ranges,
    train,
)
from .evaluation import (
    CoverageReport,
    EffectField,
    FitOptions,
    FitResult,
    coverage_report,
    effect_field,
    fit_target,
    vertex_error,
    zero_shot_fit,
)

__version__ = "0.1.0"

__all__ = [
    "Family",
    "Mesh",
    "MorphableModel",
    "load_model",
    "save_model",
    "synthesize",
    "sample_coefficients",
    "CameraView",
    "RenderConfig",
    "SoftwareRasterizer",
    "default_views",
    "CoefficientTable",
    "DatasetManifest",
    "build_dataset",
    "render_views",
    "Descriptor",
    "ScoreTable",
    "SyntheticScorerBackend",
    "descriptors_from_words",
    "score",
    "score_dataset",
    "DescriptorSelector",
    "Lexicon",
    "SelectionResult",
    "SilhouetteKMeans",
    "assign_descriptors_to_clusters",
    "cluster_images",
    "correlation_matrix",
    "select",
    "MapperArtifact",
    "MapperConfig",
    "ScoreToCoefficientMapper",
    "predict",
    "slider_ranges",
    "train",
    "CoverageReport",
    "EffectField",
    "FitOptions",
    "FitResult",
    "coverage_report",
    "effect_field",
    "fit_target",
    "vertex_error",
    "zero_shot_fit",
    "__version__",
]
