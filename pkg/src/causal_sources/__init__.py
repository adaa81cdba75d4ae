"""Latent causal sources of episodic health-record data and their per-instance effects.

The pipeline turns event tables into daily curves, samples them into a
dense cross-section matrix, separates that matrix into independent sources
with FastICA, fits an outcome model on source expressions and attributes each
prediction to the sources with Shapley values.
"""

from .curves import Curve, Curveset, build_curveset
from .exceptions import ArtifactError, PipelineError, ValidationError
from .explain import GradientBoostedTrees, LogisticModel, shap_exact, shap_sampled
from .ica import ICAModel, SourceICA, fit_ica
from .ingest import PatientRecord, freeze_vocabulary, parse_events, population_statistics
from .matrix import CrossSectionMatrix, RobustStandardizer, assemble_matrix

__version__ = "0.1.0"

__all__ = [
    "ArtifactError",
    "CrossSectionMatrix",
    "Curve",
    "Curveset",
    "GradientBoostedTrees",
    "ICAModel",
    "LogisticModel",
    "PatientRecord",
    "PipelineError",
    "RobustStandardizer",
    "SourceICA",
    "ValidationError",
    "assemble_matrix",
    "build_curveset",
    "fit_ica",
    "freeze_vocabulary",
    "parse_events",
    "population_statistics",
    "shap_exact",
    "shap_sampled",
]
