"""Held-out evaluation of outcome models."""

import numpy as np
from scipy.stats import rankdata

from .._validation import as_binary_labels, require_both_classes
from .models import log_loss


def auroc(y, scores) -> float:
    """Area under the ROC curve as the Mann-Whitney statistic; ties count 1/2."""
    y = as_binary_labels(y)
    require_both_classes(y, "held-out labels")
    scores = np.asarray(scores, dtype=float)
    ranks = rankdata(scores)
    n_pos = int(y.sum())
    n_neg = len(y) - n_pos
    return float((ranks[y == 1].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def evaluate(model, X, y) -> dict:
    """AUROC, accuracy at probability 0.5 and mean log loss on ``(X, y)``."""
    y = as_binary_labels(y, len(X))
    require_both_classes(y, "held-out labels")
    margin = model.decision_function(X)
    return {
        "auroc": auroc(y, margin),
        "accuracy": float(np.mean((margin > 0).astype(int) == y)),
        "log_loss": log_loss(y, margin),
    }
