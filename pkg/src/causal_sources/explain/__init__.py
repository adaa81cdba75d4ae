"""Outcome models on source expressions and their Shapley explanations."""

from .metrics import auroc, evaluate
from .models import (
    GradientBoostedTrees,
    LabeledCohort,
    LogisticModel,
    model_from_json,
    predict,
    train_model,
)
from .shapley import (
    ShapExplanation,
    SourceRanking,
    rank_sources,
    shap_exact,
    shap_exact_batch,
    shap_sampled,
)

__all__ = [
    "GradientBoostedTrees",
    "LabeledCohort",
    "LogisticModel",
    "ShapExplanation",
    "SourceRanking",
    "auroc",
    "evaluate",
    "model_from_json",
    "predict",
    "rank_sources",
    "shap_exact",
    "shap_exact_batch",
    "shap_sampled",
    "train_model",
]
