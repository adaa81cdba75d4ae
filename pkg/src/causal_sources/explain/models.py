"""Binary outcome models trained on source expressions or raw cross sections.

Both models expose ``decision_function`` (log-odds margin) in addition to
``predict_proba``, since Shapley values are computed on the margin scale.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import expit
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .._validation import as_binary_labels, require_both_classes
from ..exceptions import ConvergenceWarning, ValidationError

FEATURE_SPACES = ("sources", "raw")


def log_loss(y, margin) -> float:
    # log(1 + e^m) - y m, computed stably
    return float(np.mean(np.logaddexp(0.0, margin) - y * margin))


@dataclass
class RegressionTree:
    """Axis-aligned binary tree; ``feature == -1`` marks a leaf."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def used_features(self) -> list[int]:
        return sorted({int(f) for f in self.feature if f >= 0})

    def apply(self, X) -> np.ndarray:
        node = np.zeros(len(X), dtype=int)
        while True:
            f = self.feature[node]
            internal = f >= 0
            if not internal.any():
                return node
            rows = np.nonzero(internal)[0]
            n = node[rows]
            go_left = X[rows, self.feature[n]] <= self.threshold[n]
            node[rows] = np.where(go_left, self.left[n], self.right[n])

    def predict(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def to_dict(self):
        return {k: getattr(self, k).tolist() for k in ("feature", "threshold", "left", "right", "value")}

    @classmethod
    def from_dict(cls, d):
        return cls(
            np.asarray(d["feature"], dtype=int),
            np.asarray(d["threshold"], dtype=float),
            np.asarray(d["left"], dtype=int),
            np.asarray(d["right"], dtype=int),
            np.asarray(d["value"], dtype=float),
        )


def _best_split(X, order, in_node, r, min_samples_leaf):
    """Variance-reduction split of the rows flagged by ``in_node``.

    Returns ``(gain, feature, threshold)`` or ``None``.
    """
    n = int(in_node.sum())
    if n < 2 * min_samples_leaf:
        return None
    total = r[in_node].sum()
    base = total * total / n
    best = None
    counts = np.arange(1, n)
    valid_counts = (counts >= min_samples_leaf) & (n - counts >= min_samples_leaf)
    for f in range(X.shape[1]):
        idx = order[f][in_node[order[f]]]
        xs = X[idx, f]
        distinct = xs[1:] > xs[:-1]
        ok = distinct & valid_counts
        if not ok.any():
            continue
        left = np.cumsum(r[idx])[:-1]
        right = total - left
        gain = left * left / counts + right * right / (n - counts) - base
        gain = np.where(ok, gain, -np.inf)
        i = int(np.argmax(gain))
        if best is None or gain[i] > best[0]:
            best = (float(gain[i]), f, 0.5 * (xs[i] + xs[i + 1]))
    if best is None or best[0] <= 1e-12 * max(1.0, abs(base)):
        return None
    return best


def fit_regression_tree(X, r, order, max_depth=3, min_samples_leaf=1) -> RegressionTree:
    """Greedy depth-limited least-squares tree; leaves hold the mean target."""
    feature, threshold, left, right, value = [], [], [], [], []

    def grow(in_node, depth):
        node = len(feature)
        feature.append(-1)
        threshold.append(np.inf)
        left.append(-1)
        right.append(-1)
        value.append(float(r[in_node].mean()))
        if depth >= max_depth:
            return node
        split = _best_split(X, order, in_node, r, min_samples_leaf)
        if split is None:
            return node
        _, f, thr = split
        goes_left = X[:, f] <= thr
        feature[node], threshold[node] = f, thr
        left[node] = grow(in_node & goes_left, depth + 1)
        right[node] = grow(in_node & ~goes_left, depth + 1)
        return node

    grow(np.ones(len(r), dtype=bool), 0)
    return RegressionTree(
        np.array(feature, dtype=int), np.array(threshold), np.array(left, dtype=int),
        np.array(right, dtype=int), np.array(value),
    )


class _MarginClassifier(ClassifierMixin, BaseEstimator):
    kind = ""

    def _validate_fit(self, X, y):
        X = check_array(X)
        y = as_binary_labels(y, X.shape[0])
        require_both_classes(y)
        if self.feature_space not in FEATURE_SPACES:
            raise ValidationError(f"feature_space must be one of {FEATURE_SPACES}")
        self.classes_ = np.array([0, 1])
        self.n_features_in_ = X.shape[1]
        return X, y

    def _validate_predict(self, X):
        check_is_fitted(self)
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def predict_proba(self, X):
        p = expit(self.decision_function(X))
        return np.column_stack([1 - p, p])

    def predict(self, X):
        return (self.decision_function(X) > 0).astype(int)

    def to_json(self, **extra) -> str:
        check_is_fitted(self)
        return json.dumps(
            {"kind": self.kind, "hyperparameters": self.get_params(), "n_features": self.n_features_in_,
             "parameters": self._parameters(), **extra},
            indent=1,
        )


class GradientBoostedTrees(_MarginClassifier):
    """Gradient boosting of regression trees on the logistic loss.

    Every round fits a depth-limited least-squares tree to the residuals
    ``y - p`` (the negative gradient) and adds it to the margin scaled by
    ``learning_rate``. Leaves hold mean residuals, a plain gradient step,
    which keeps the training loss non-increasing for any learning rate up
    to 8 (the logistic loss has curvature at most 1/4).

    Parameters
    ----------
    n_rounds : int, default=200
    learning_rate : float, default=0.1
    max_depth : int, default=3
    min_samples_leaf : int, default=1
    feature_space : {"sources", "raw"}
        Tag recording what the features are; does not change fitting.
    random_state : int
        Recorded for reproducibility; the greedy fit itself is deterministic.
    """

    kind = "boosted_trees"

    def __init__(self, n_rounds=200, learning_rate=0.1, max_depth=3, min_samples_leaf=1,
                 feature_space="sources", random_state=0):
        self.n_rounds = n_rounds
        self.learning_rate = learning_rate
        self.max_depth = max_depth
        self.min_samples_leaf = min_samples_leaf
        self.feature_space = feature_space
        self.random_state = random_state

    def fit(self, X, y):
        X, y = self._validate_fit(X, y)
        prior = y.mean()
        self.init_margin_ = float(np.log(prior / (1 - prior)))
        order = [np.argsort(X[:, f], kind="stable") for f in range(X.shape[1])]
        margin = np.full(len(y), self.init_margin_)
        self.trees_ = []
        self.train_loss_ = [log_loss(y, margin)]
        for _ in range(self.n_rounds):
            resid = y - expit(margin)
            tree = fit_regression_tree(X, resid, order, self.max_depth, self.min_samples_leaf)
            tree.value = tree.value * self.learning_rate
            self.trees_.append(tree)
            margin += tree.predict(X)
            self.train_loss_.append(log_loss(y, margin))
        return self

    def decision_function(self, X):
        X = self._validate_predict(X)
        out = np.full(len(X), self.init_margin_)
        for t in self.trees_:
            out += t.predict(X)
        return out

    def _parameters(self):
        return {"init_margin": self.init_margin_, "trees": [t.to_dict() for t in self.trees_]}

    @classmethod
    def _from_parameters(cls, hp, n_features, p):
        m = cls(**hp)
        m.classes_ = np.array([0, 1])
        m.n_features_in_ = n_features
        m.init_margin_ = float(p["init_margin"])
        m.trees_ = [RegressionTree.from_dict(t) for t in p["trees"]]
        return m


class LogisticModel(_MarginClassifier):
    """L2-regularized logistic regression fitted by damped Newton steps.

    Minimizes ``mean log-loss + alpha / 2 * ||w||^2`` (intercept not
    penalized) until the gradient norm drops below ``tol``.
    """

    kind = "logistic"

    def __init__(self, alpha=1e-4, tol=1e-8, max_iter=100, feature_space="sources", random_state=0):
        self.alpha = alpha
        self.tol = tol
        self.max_iter = max_iter
        self.feature_space = feature_space
        self.random_state = random_state

    def fit(self, X, y):
        X, y = self._validate_fit(X, y)
        n, k = X.shape
        Z = np.column_stack([X, np.ones(n)])
        penalty = np.full(k + 1, self.alpha)
        penalty[-1] = 0.0
        beta = np.zeros(k + 1)

        def objective(b):
            return log_loss(y, Z @ b) + 0.5 * np.sum(penalty * b * b)

        obj = objective(beta)
        self.converged_ = False
        for it in range(1, self.max_iter + 1):
            p = expit(Z @ beta)
            grad = Z.T @ (p - y) / n + penalty * beta
            if np.linalg.norm(grad) < self.tol:
                self.converged_ = True
                break
            H = (Z * (p * (1 - p))[:, None]).T @ Z / n + np.diag(penalty) + 1e-12 * np.eye(k + 1)
            step = np.linalg.solve(H, grad)
            t = 1.0
            while t > 1e-10:
                cand = beta - t * step
                cand_obj = objective(cand)
                if cand_obj <= obj - 1e-4 * t * grad @ step:
                    break
                t *= 0.5
            if t <= 1e-10:
                # no further decrease is representable in floating point
                self.converged_ = np.linalg.norm(grad) < 1e-6
                break
            beta, obj = cand, cand_obj
        if not self.converged_:
            warnings.warn("logistic fit stopped before reaching tol", ConvergenceWarning, stacklevel=2)
        self.n_iter_ = it
        self.coef_ = beta[:-1]
        self.intercept_ = float(beta[-1])
        return self

    def decision_function(self, X):
        X = self._validate_predict(X)
        return X @ self.coef_ + self.intercept_

    def _parameters(self):
        return {"coef": self.coef_.tolist(), "intercept": self.intercept_}

    @classmethod
    def _from_parameters(cls, hp, n_features, p):
        m = cls(**hp)
        m.classes_ = np.array([0, 1])
        m.n_features_in_ = n_features
        m.coef_ = np.asarray(p["coef"], dtype=float)
        m.intercept_ = float(p["intercept"])
        return m


MODEL_KINDS = {GradientBoostedTrees.kind: GradientBoostedTrees, LogisticModel.kind: LogisticModel}


def model_from_json(text: str):
    d = json.loads(text)
    if d.get("kind") not in MODEL_KINDS:
        raise ValidationError(f"unknown model kind {d.get('kind')!r}")
    return MODEL_KINDS[d["kind"]]._from_parameters(d["hyperparameters"], d["n_features"], d["parameters"])


@dataclass
class LabeledCohort:
    """Feature columns (features x columns), binary labels and provenance."""

    features: np.ndarray
    labels: np.ndarray
    provenance: list | None = None
    feature_space: str = "sources"

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        self.labels = as_binary_labels(self.labels, self.features.shape[1])


def train_model(cohort: LabeledCohort, kind="boosted_trees", **hyperparams):
    """Fit a causal (``sources``) or baseline (``raw``) model on a cohort."""
    if kind not in MODEL_KINDS:
        raise ValidationError(f"unknown model kind {kind!r}")
    X = cohort.features.T
    if X.shape[0] < 2:
        raise ValidationError("need at least two labeled columns")
    if not np.all(np.isfinite(X)):
        raise ValidationError("features contain non-finite values")
    model = MODEL_KINDS[kind](feature_space=cohort.feature_space, **hyperparams)
    return model.fit(X, cohort.labels)


def predict(model, instance) -> float:
    """Outcome probability for one feature vector."""
    x = np.asarray(instance, dtype=float).reshape(1, -1)
    return float(model.predict_proba(x)[0, 1])
