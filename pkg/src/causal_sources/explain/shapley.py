"""Interventional Shapley values of model inputs on the log-odds scale.

For an instance ``x`` and a background set ``B`` the value of a coalition
``T`` is the mean margin over ``b in B`` of the hybrid point taking ``x`` on
``T`` and ``b`` elsewhere. ``base_value`` is the value of the empty
coalition, and ``base_value + sum(phi)`` equals the margin at ``x``.

Instances and background sets are row-oriented: ``(n, n_features)``.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np

from .._validation import check_rng
from ..exceptions import ValidationError
from .models import GradientBoostedTrees, LogisticModel

MAX_EXACT_FEATURES = 20
_MAX_ROWS = 1 << 20


@dataclass
class ShapExplanation:
    phi: np.ndarray
    base_value: float
    output: float
    estimator: str = "exact"
    n_permutations: int | None = None
    se: np.ndarray | None = None
    provenance: tuple | None = None

    @property
    def efficiency_gap(self) -> float:
        return float(self.base_value + self.phi.sum() - self.output)


@dataclass
class SourceRanking:
    importance: np.ndarray
    order: np.ndarray

    def top(self, m):
        return self.order[:m]


def margin_function(model):
    """Callable mapping an ``(n, k)`` array to log-odds margins."""
    if hasattr(model, "decision_function"):
        return model.decision_function
    if callable(model):
        return lambda X: np.asarray(model(X), dtype=float).reshape(len(X))
    raise ValidationError("model must expose decision_function or be callable")


def _check_inputs(instance, background):
    x = np.asarray(instance, dtype=float).ravel()
    bg = np.atleast_2d(np.asarray(background, dtype=float))
    if bg.shape[0] == 0:
        raise ValidationError("background set is empty")
    if bg.shape[1] != x.size:
        raise ValidationError(f"background has {bg.shape[1]} features, instance has {x.size}")
    return x, bg


def subset_masks(k: int) -> np.ndarray:
    """All ``2**k`` coalitions as a boolean ``(2**k, k)`` array, bit i = feature i."""
    ints = np.arange(1 << k)
    return ((ints[:, None] >> np.arange(k)) & 1).astype(bool)


def shapley_weights(k: int) -> np.ndarray:
    """``w[s] = s! (k - s - 1)! / k!`` for coalition sizes ``s = 0..k-1``."""
    return np.array([math.factorial(s) * math.factorial(k - s - 1) / math.factorial(k) for s in range(k)])


def coalition_values(f, x, background, masks) -> np.ndarray:
    """Mean margin over the background of each coalition's hybrid points."""
    n_bg, k = background.shape
    out = np.empty(len(masks))
    step = max(1, _MAX_ROWS // n_bg)
    for lo in range(0, len(masks), step):
        m = masks[lo:lo + step]
        hybrid = np.where(m[:, None, :], x[None, None, :], background[None, :, :])
        out[lo:lo + step] = f(hybrid.reshape(-1, k)).reshape(len(m), n_bg).mean(axis=1)
    return out


def _phi_from_values(v, k) -> np.ndarray:
    """Shapley values from values of all ``2**k`` coalitions indexed by bitmask."""
    ints = np.arange(1 << k)
    size = np.array([bin(i).count("1") for i in ints]) if k <= 16 else subset_masks(k).sum(axis=1)
    w = shapley_weights(k)
    phi = np.empty(k)
    for i in range(k):
        without = ints[(ints >> i) & 1 == 0]
        phi[i] = np.sum(w[size[without]] * (v[without | (1 << i)] - v[without]))
    return phi


def _enumerate(model, x, bg):
    k = x.size
    v = coalition_values(margin_function(model), x, bg, subset_masks(k))
    return _phi_from_values(v, k), float(v[0]), float(v[-1])


def _leaf_paths(tree):
    """For every leaf: its value and the (node, goes_left) conditions on its path."""
    paths = []

    def walk(node, conds):
        if tree.feature[node] < 0:
            paths.append((float(tree.value[node]), conds))
            return
        walk(int(tree.left[node]), conds + [(node, True)])
        walk(int(tree.right[node]), conds + [(node, False)])

    walk(0, [])
    return paths


def _tree_ensemble_shap(model: GradientBoostedTrees, X, bg):
    """Exact interventional Shapley values of a tree ensemble, batched over rows of X.

    By linearity in the model the ensemble's values are the sum of each
    tree's, and a tree's value function only depends on the features it
    splits on, so each tree is enumerated over its own (few) features.
    For a fixed coalition a leaf is reached by hybrid point ``(x, b)`` iff
    the instance satisfies the path conditions on coalition features and
    the background row satisfies the rest, so the background average
    factorizes per leaf.
    """
    m = X.shape[0]
    phi = np.zeros((m, X.shape[1]))
    base = model.init_margin_
    for tree in model.trees_:
        used = tree.used_features()
        paths = _leaf_paths(tree)
        if not used:
            base += paths[0][0]
            continue
        u = len(used)
        pos = {f: j for j, f in enumerate(used)}
        left_x = {}
        left_b = {}
        for node in np.nonzero(tree.feature >= 0)[0]:
            f, thr = tree.feature[node], tree.threshold[node]
            left_x[node] = X[:, f] <= thr
            left_b[node] = bg[:, f] <= thr
        masks = subset_masks(u)
        v = np.zeros((len(masks), m))
        for value, conds in paths:
            for s, mask in enumerate(masks):
                a = np.ones(m, dtype=bool)
                c = np.ones(len(bg), dtype=bool)
                for node, goes_left in conds:
                    if mask[pos[tree.feature[node]]]:
                        a &= left_x[node] if goes_left else ~left_x[node]
                    else:
                        c &= left_b[node] if goes_left else ~left_b[node]
                frac = c.mean()
                if frac:
                    v[s] += value * frac * a
        base += float(v[0, 0])
        w = shapley_weights(u)
        sizes = masks.sum(axis=1)
        ints = np.arange(1 << u)
        for j, f in enumerate(used):
            without = ints[(ints >> j) & 1 == 0]
            phi[:, f] += (w[sizes[without], None] * (v[without | (1 << j)] - v[without])).sum(axis=0)
    return phi, base


def _linear_shap(model: LogisticModel, X, bg):
    mean = bg.mean(axis=0)
    phi = model.coef_[None, :] * (X - mean[None, :])
    return phi, float(model.intercept_ + model.coef_ @ mean)


def shap_exact(model, instance, background, provenance=None, algorithm="auto") -> ShapExplanation:
    """Exact interventional Shapley values of one instance.

    ``algorithm="enumerate"`` evaluates the model on every one of the
    ``2**k`` coalitions. ``"auto"`` uses the equivalent per-tree or linear
    decomposition for the built-in model kinds and enumeration otherwise.
    """
    x, bg = _check_inputs(instance, background)
    if x.size > MAX_EXACT_FEATURES:
        raise ValidationError(
            f"{x.size} features exceed the exact enumeration bound of {MAX_EXACT_FEATURES}; use shap_sampled"
        )
    if algorithm == "auto" and isinstance(model, (GradientBoostedTrees, LogisticModel)):
        return shap_exact_batch(model, x[None, :], bg, [provenance])[0]
    if algorithm not in ("auto", "enumerate"):
        raise ValidationError(f"unknown algorithm {algorithm!r}")
    phi, base, out = _enumerate(model, x, bg)
    return ShapExplanation(phi, base, out, "exact", provenance=provenance)


def shap_exact_batch(model, X, background, provenance=None, chunk=512) -> list[ShapExplanation]:
    """Exact Shapley values for every row of ``X``."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    _, bg = _check_inputs(X[0], background)
    provenance = list(provenance) if provenance is not None else [None] * len(X)
    if X.shape[1] > MAX_EXACT_FEATURES:
        raise ValidationError(
            f"{X.shape[1]} features exceed the exact enumeration bound of {MAX_EXACT_FEATURES}; use shap_sampled"
        )
    if isinstance(model, GradientBoostedTrees):
        decompose = _tree_ensemble_shap
    elif isinstance(model, LogisticModel):
        decompose = _linear_shap
    else:
        return [shap_exact(model, x, bg, p, algorithm="enumerate") for x, p in zip(X, provenance)]
    out = []
    for lo in range(0, len(X), chunk):
        block = X[lo:lo + chunk]
        phi, base = decompose(model, block, bg)
        margins = model.decision_function(block)
        out += [ShapExplanation(phi[i], base, float(margins[i]), "exact", provenance=provenance[lo + i])
                for i in range(len(block))]
    return out


def shap_sampled(model, instance, background, n_permutations=1000, rng=0, provenance=None) -> ShapExplanation:
    """Antithetic permutation-sampling estimate of the Shapley values.

    Permutations are drawn in pairs (a permutation and its reverse); the
    pair averages are i.i.d., and their spread gives the per-feature
    standard error. An odd ``n_permutations`` is rounded up to even.
    """
    if n_permutations < 1:
        raise ValidationError("n_permutations must be >= 1")
    x, bg = _check_inputs(instance, background)
    rng = check_rng(rng)
    k = x.size
    n_pairs = (n_permutations + 1) // 2
    fwd = np.array([rng.permutation(k) for _ in range(n_pairs)]).reshape(n_pairs, k)
    perms = np.concatenate([fwd, fwd[:, ::-1]])

    # coalition after the first j features of each permutation, j = 0..k
    rank = np.argsort(perms, axis=1)
    prefix = rank[:, None, :] < np.arange(k + 1)[None, :, None]
    flat = prefix.reshape(-1, k)
    uniq, inverse = np.unique(np.packbits(flat, axis=1), axis=0, return_inverse=True)
    coalitions = np.unpackbits(uniq, axis=1, count=k).astype(bool)
    v = coalition_values(margin_function(model), x, bg, coalitions)[inverse.ravel()].reshape(len(perms), k + 1)

    contrib = np.zeros((len(perms), k))
    np.put_along_axis(contrib, perms, np.diff(v, axis=1), axis=1)
    pair_means = 0.5 * (contrib[:n_pairs] + contrib[n_pairs:])
    phi = pair_means.mean(axis=0)
    if n_pairs > 1:
        se = pair_means.std(axis=0, ddof=1) / np.sqrt(n_pairs)
    else:
        se = np.full(k, np.nan)
    return ShapExplanation(phi, float(v[0, 0]), float(v[0, -1]), "permutation", 2 * n_pairs, se, provenance)


def rank_sources(explanations) -> SourceRanking:
    """Order sources by mean absolute Shapley value, ties by index."""
    explanations = list(explanations)
    if not explanations:
        raise ValidationError("no explanations to rank")
    k = explanations[0].phi.size
    if any(e.phi.size != k for e in explanations):
        raise ValidationError("explanations disagree on the number of sources")
    importance = np.mean([np.abs(e.phi) for e in explanations], axis=0)
    order = np.lexsort((np.arange(k), -importance))
    return SourceRanking(importance, order)


def write_explanations(explanations) -> str:
    """One row per (patient, day): estimator, base value, phi and SE vectors."""
    explanations = list(explanations)
    k = explanations[0].phi.size if explanations else 0
    buf = io.StringIO()
    header = ["patient_id", "day", "estimator", "base_value", "output"]
    header += [f"phi_{i}" for i in range(k)] + [f"se_{i}" for i in range(k)]
    buf.write(",".join(header) + "\n")
    for e in explanations:
        pid, day = e.provenance if e.provenance is not None else ("", "")
        se = [""] * k if e.se is None else [repr(float(s)) for s in e.se]
        row = [str(pid), str(day), e.estimator, repr(e.base_value), repr(e.output)]
        row += [repr(float(p)) for p in e.phi] + se
        buf.write(",".join(row) + "\n")
    return buf.getvalue()


def read_explanations(text: str) -> list[ShapExplanation]:
    lines = [ln for ln in text.splitlines() if ln]
    header = lines[0].split(",")
    k = sum(h.startswith("phi_") for h in header)
    out = []
    for ln in lines[1:]:
        f = ln.split(",")
        se = None if f[5 + k] == "" else np.array([float(s) for s in f[5 + k:5 + 2 * k]])
        out.append(ShapExplanation(
            np.array([float(p) for p in f[5:5 + k]]), float(f[3]), float(f[4]), f[2],
            se=se, provenance=(f[0], int(f[1]) if f[1] else None),
        ))
    return out
