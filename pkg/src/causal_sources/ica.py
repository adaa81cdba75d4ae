"""Whitening and symmetric fixed-point FastICA, realizing X = A S.

Functions here use the variables-by-columns orientation of the
cross-section matrix. :class:`SourceICA` wraps them in a scikit-learn
transformer over ``(n_samples, n_features)`` arrays.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._validation import as_finite_matrix, check_rng
from .exceptions import ConvergenceWarning, ValidationError
from .matrix import CrossSectionMatrix

EIGEN_FLOOR = 1e-10


class RankWarning(UserWarning):
    """Requested component count exceeds the numerical rank."""


class GaussianityWarning(UserWarning):
    """Some recovered sources are statistically indistinguishable from Gaussian."""


@dataclass
class WhiteningTransform:
    mean: np.ndarray
    projection: np.ndarray
    inverse_projection: np.ndarray
    eigenvalues: np.ndarray
    requested_k: int

    @property
    def k(self) -> int:
        return self.projection.shape[0]

    def apply(self, X) -> np.ndarray:
        return self.projection @ (X - self.mean[:, None])


@dataclass
class FastICAResult:
    rotation: np.ndarray
    converged: bool
    n_iter: int
    delta: float
    excess_kurtosis: np.ndarray | None = None
    kurtosis_bound: float = 0.0

    @property
    def gaussian_like(self) -> np.ndarray:
        """Sources whose excess kurtosis is within ``kurtosis_bound`` of zero."""
        return np.abs(self.excess_kurtosis) < self.kurtosis_bound


@dataclass
class ICAModel:
    mean: np.ndarray
    projection: np.ndarray
    inverse_projection: np.ndarray
    rotation: np.ndarray
    unmixing: np.ndarray
    mixing: np.ndarray
    contrast: str = "logcosh"
    convergence: dict = field(default_factory=dict)
    vocabulary_hash: str = ""
    variable_names: list[str] | None = None

    @property
    def k(self) -> int:
        return self.unmixing.shape[0]

    def to_json(self) -> str:
        # float repr round-trips exactly, so a reloaded model is bit-identical
        return json.dumps(
            {
                "n_variables": int(self.mixing.shape[0]),
                "k": int(self.k),
                "mean": self.mean.tolist(),
                "projection": self.projection.tolist(),
                "inverse_projection": self.inverse_projection.tolist(),
                "rotation": self.rotation.tolist(),
                "contrast": self.contrast,
                "convergence": self.convergence,
                "vocabulary_hash": self.vocabulary_hash,
                "variable_names": self.variable_names,
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "ICAModel":
        d = json.loads(text)
        w = WhiteningTransform(
            mean=np.asarray(d["mean"], dtype=float),
            projection=np.asarray(d["projection"], dtype=float).reshape(d["k"], d["n_variables"]),
            inverse_projection=np.asarray(d["inverse_projection"], dtype=float).reshape(d["n_variables"], d["k"]),
            eigenvalues=np.array([]),
            requested_k=d["k"],
        )
        rotation = np.asarray(d["rotation"], dtype=float).reshape(d["k"], d["k"])
        model = compose_model(w, rotation, contrast=d["contrast"], convergence=d["convergence"])
        model.vocabulary_hash = d["vocabulary_hash"]
        model.variable_names = d["variable_names"]
        return model


def whiten(X_std, k, strict=False) -> tuple[WhiteningTransform, np.ndarray]:
    """Center rows and project onto the top-``k`` principal axes with unit variance.

    Eigenvalues of the sample covariance below ``1e-10`` are dropped; ``k``
    shrinks accordingly with a :class:`RankWarning`, or a ValidationError
    when ``strict``.
    """
    X = as_finite_matrix(X_std, "X_std")
    n_vars, n = X.shape
    if not 1 <= k <= min(n_vars, n - 1):
        raise ValidationError(f"k={k} must lie in [1, {min(n_vars, n - 1)}]")
    mean = X.mean(axis=1)
    Xc = X - mean[:, None]
    cov = Xc @ Xc.T / n
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals, evecs = evals[order], evecs[:, order]
    keep = min(k, int(np.sum(evals > EIGEN_FLOOR)))
    if keep < k:
        msg = f"numerical rank {keep} is below requested k={k}"
        if strict or keep == 0:
            raise ValidationError(msg)
        warnings.warn(msg + f"; using k={keep}", RankWarning, stacklevel=2)
    lam, E = evals[:keep], evecs[:, :keep]
    # fix eigenvector signs so the transform is reproducible across LAPACK builds
    E = E * np.where(E[np.argmax(np.abs(E), axis=0), np.arange(keep)] < 0, -1.0, 1.0)
    projection = (E / np.sqrt(lam)).T
    inverse_projection = E * np.sqrt(lam)
    w = WhiteningTransform(mean, projection, inverse_projection, evals, k)
    return w, projection @ Xc


def _contrast(name):
    if name == "logcosh":
        def g(u):
            t = np.tanh(u)
            return t, 1.0 - t * t
    elif name == "exp":
        def g(u):
            e = np.exp(-0.5 * u * u)
            return u * e, (1.0 - u * u) * e
    else:
        raise ValidationError(f"unknown contrast {name!r}; use 'logcosh' or 'exp'")
    return g


def symmetric_decorrelation(W) -> np.ndarray:
    """W <- (W W^T)^(-1/2) W."""
    s, u = np.linalg.eigh(W @ W.T)
    return (u / np.sqrt(s)) @ u.T @ W


def random_orthogonal(k, rng) -> np.ndarray:
    q, r = np.linalg.qr(rng.standard_normal((k, k)))
    return q * np.sign(np.diag(r))


def fastica(Z, k=None, contrast="logcosh", tol=1e-4, max_iter=500, rng=0) -> FastICAResult:
    """Parallel fixed-point iteration on whitened data ``Z`` (k x n).

    Returns the orthogonal rotation W such that ``W @ Z`` are the estimated
    sources. Non-convergence is reported through ``converged`` rather than
    raised. Sources whose excess kurtosis is within three standard errors
    (``3 * sqrt(24 / n)``) of zero trigger a :class:`GaussianityWarning`,
    since ICA cannot identify them.
    """
    Z = as_finite_matrix(Z, "Z")
    if tol <= 0:
        raise ValidationError("tol must be positive")
    k = Z.shape[0] if k is None else k
    if k != Z.shape[0]:
        raise ValidationError(f"whitened data has {Z.shape[0]} rows, expected k={k}")
    g = _contrast(contrast)
    rng = check_rng(rng)
    n = Z.shape[1]

    W = random_orthogonal(k, rng)
    delta = np.inf
    converged = False
    for it in range(1, max_iter + 1):
        gu, gpu = g(W @ Z)
        W_new = symmetric_decorrelation(gu @ Z.T / n - gpu.mean(axis=1)[:, None] * W)
        delta = float(np.max(np.abs(1.0 - np.abs(np.sum(W_new * W, axis=1)))))
        W = W_new
        if delta < tol:
            converged = True
            break
    if not converged:
        warnings.warn(
            f"FastICA did not converge in {max_iter} iterations (delta={delta:.3g})",
            ConvergenceWarning,
            stacklevel=2,
        )
    U = W @ Z
    U = U - U.mean(axis=1, keepdims=True)
    kurt = np.mean(U**4, axis=1) / np.mean(U**2, axis=1) ** 2 - 3.0
    res = FastICAResult(W, converged, it, delta, kurt, 3.0 * np.sqrt(24.0 / n))
    if res.gaussian_like.any():
        warnings.warn(
            f"{int(res.gaussian_like.sum())} of {k} sources look Gaussian; they are not identifiable",
            GaussianityWarning,
            stacklevel=2,
        )
    return res


def compose_model(whitening: WhiteningTransform, rotation, contrast="logcosh", convergence=None) -> ICAModel:
    """Combine whitening and rotation into unmixing and mixing matrices.

    Each source is signed so that its signature's largest-magnitude loading
    is positive.
    """
    R = np.asarray(rotation, dtype=float)
    if R.shape != (whitening.k, whitening.k):
        raise ValidationError(f"rotation shape {R.shape} does not match k={whitening.k}")
    A = whitening.inverse_projection @ R.T
    peak = A[np.argmax(np.abs(A), axis=0), np.arange(A.shape[1])]
    R = R * np.where(peak < 0, -1.0, 1.0)[:, None]
    return ICAModel(
        mean=whitening.mean,
        projection=whitening.projection,
        inverse_projection=whitening.inverse_projection,
        rotation=R,
        unmixing=R @ whitening.projection,
        mixing=whitening.inverse_projection @ R.T,
        contrast=contrast,
        convergence=dict(convergence or {}),
    )


@dataclass
class SourceMatrix:
    values: np.ndarray
    provenance: list | None = None


def transform(model: ICAModel, X_std) -> SourceMatrix:
    """Source expressions ``S = unmixing @ (X - mean)``."""
    prov = None
    if isinstance(X_std, CrossSectionMatrix):
        X_std, prov = X_std.values, X_std.provenance
    X = np.asarray(X_std, dtype=float)
    if X.ndim != 2 or X.shape[0] != model.mixing.shape[0]:
        raise ValidationError(f"expected {model.mixing.shape[0]} variables, got shape {X.shape}")
    return SourceMatrix(model.unmixing @ (X - model.mean[:, None]), prov)


def signature(model: ICAModel, index, top_m=10, variable_names=None) -> list[tuple[str, float]]:
    """Largest-magnitude loadings of one source's column of the mixing matrix."""
    if not 0 <= index < model.k:
        raise ValidationError(f"source index {index} out of range for k={model.k}")
    names = variable_names or model.variable_names
    col = model.mixing[:, index]
    order = np.argsort(-np.abs(col), kind="stable")[: max(top_m, 0)]
    return [(names[i] if names else str(i), float(col[i])) for i in order]


def fit_ica(X_std, k, contrast="logcosh", tol=1e-4, max_iter=500, seed=0, strict=False) -> ICAModel:
    """Whiten, run FastICA and compose the model in one call."""
    w, Z = whiten(X_std, k, strict=strict)
    res = fastica(Z, w.k, contrast=contrast, tol=tol, max_iter=max_iter, rng=seed)
    report = {"converged": res.converged, "n_iter": res.n_iter, "delta": res.delta,
              "requested_k": k, "k": w.k, "gaussian_like": [bool(b) for b in res.gaussian_like]}
    return compose_model(w, res.rotation, contrast, report)


class SourceICA(TransformerMixin, BaseEstimator):
    """Scikit-learn transformer returning independent source expressions.

    Parameters
    ----------
    n_components : int
        Number of sources; reduced if the data rank is lower.
    contrast : {"logcosh", "exp"}
    tol : float
    max_iter : int
    random_state : int
        Seed for the random orthogonal start. Required.

    Attributes
    ----------
    model_ : ICAModel
    mixing_ : ndarray of shape (n_features, n_components)
        Columns are the source signatures.
    components_ : ndarray of shape (n_components, n_features)
        Unmixing matrix.
    """

    def __init__(self, n_components=16, contrast="logcosh", tol=1e-4, max_iter=500, random_state=0):
        self.n_components = n_components
        self.contrast = contrast
        self.tol = tol
        self.max_iter = max_iter
        self.random_state = random_state

    def fit(self, X, y=None):
        X = check_array(X)
        self.model_ = fit_ica(X.T, self.n_components, self.contrast, self.tol, self.max_iter, self.random_state)
        self.mixing_ = self.model_.mixing
        self.components_ = self.model_.unmixing
        self.mean_ = self.model_.mean
        self.n_features_in_ = X.shape[1]
        self.converged_ = self.model_.convergence["converged"]
        self.n_iter_ = self.model_.convergence["n_iter"]
        return self

    def transform(self, X):
        check_is_fitted(self)
        return transform(self.model_, check_array(X).T).values.T

    def inverse_transform(self, S):
        check_is_fitted(self)
        S = check_array(S)
        return S @ self.mixing_.T + self.mean_
