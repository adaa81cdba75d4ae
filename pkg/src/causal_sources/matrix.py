"""Random cross sections of curvesets, stacked into the matrix X.

X has one row per vocabulary variable and one column per sampled
(patient, day) cross section.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from ._seeding import derive_rng
from .curves import DAYS_PER_YEAR, Curveset
from .exceptions import ValidationError


@dataclass
class CrossSectionMatrix:
    values: np.ndarray
    provenance: list[tuple[str, int]]
    vocabulary_hash: str = ""

    @property
    def shape(self):
        return self.values.shape

    def __post_init__(self):
        if self.values.ndim != 2 or self.values.shape[1] != len(self.provenance):
            raise ValidationError(
                f"matrix shape {self.values.shape} does not match {len(self.provenance)} provenance entries"
            )


def n_samples_for_span(span_days: int, density: float) -> int:
    expected = span_days / DAYS_PER_YEAR * density
    return max(1, int(math.floor(expected + 0.5)))


def sample_times(span, density, rng) -> np.ndarray:
    """Sorted sample days drawn uniformly with replacement from ``span``.

    The count is ``max(1, round(span_years * density))`` where ``span`` is a
    ``(first_day, last_day)`` pair and ``density`` is in samples per year.
    """
    if density <= 0:
        raise ValidationError("density must be positive")
    first, last = span
    n = n_samples_for_span(last - first + 1, density)
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return np.sort(rng.integers(first, last + 1, size=n))


def cross_section(cs: Curveset, day: int) -> np.ndarray:
    first, last = cs.grid
    if not first <= day <= last:
        raise ValidationError(f"day {day} outside grid {cs.grid}")
    return cs.values[:, day - first].copy()


def assemble_matrix(curvesets, density=4.0, seed=0) -> CrossSectionMatrix:
    """Stack sampled cross sections of every patient, patient by patient.

    Each patient draws from its own generator derived from ``(seed,
    patient_id)``, so the result does not depend on processing order.
    """
    curvesets = list(curvesets)
    if not curvesets:
        raise ValidationError("no curvesets to assemble")
    vocab_hash = curvesets[0].vocabulary_hash
    n_vars = curvesets[0].values.shape[0]
    blocks, prov = [], []
    for cs in curvesets:
        if cs.values.shape[0] != n_vars or cs.vocabulary_hash != vocab_hash:
            raise ValidationError(f"curveset {cs.patient_id!r} uses a different vocabulary")
        days = sample_times(cs.grid, density, derive_rng(seed, "sample", cs.patient_id))
        blocks.append(cs.values[:, days - cs.grid[0]])
        prov.extend((cs.patient_id, int(d)) for d in days)
    return CrossSectionMatrix(np.hstack(blocks), prov, vocab_hash)


class RobustStandardizer(TransformerMixin, BaseEstimator):
    """Per-feature median centering and interquartile-range scaling.

    Features with zero IQR fall back to the standard deviation, and to 1 if
    that is zero as well. Spreads smaller than machine epsilon times the
    feature's largest magnitude are treated as zero. Follows the scikit-learn orientation:
    ``(n_samples, n_features)``.
    """

    def fit(self, X, y=None):
        X = check_array(X)
        if X.shape[0] < 2:
            raise ValidationError("at least two samples are required to fit a standardizer")
        q25, q50, q75 = np.percentile(X, [25, 50, 75], axis=0)
        # spreads below rounding noise of the feature's magnitude count as zero
        floor = np.finfo(float).eps * np.maximum(1.0, np.abs(X).max(axis=0))
        scale = q75 - q25
        sd = X.std(axis=0)
        scale = np.where(scale > floor, scale, np.where(sd > floor, sd, 1.0))
        self.center_ = q50
        self.scale_ = scale
        self.n_features_in_ = X.shape[1]
        return self

    def _check(self, X):
        check_is_fitted(self)
        X = check_array(X)
        if X.shape[1] != self.n_features_in_:
            raise ValidationError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X

    def transform(self, X):
        return (self._check(X) - self.center_) / self.scale_

    def inverse_transform(self, X):
        return self._check(X) * self.scale_ + self.center_

    def to_dict(self):
        return {"center": self.center_.tolist(), "scale": self.scale_.tolist()}

    @classmethod
    def from_dict(cls, d):
        std = cls()
        std.center_ = np.asarray(d["center"], dtype=float)
        std.scale_ = np.asarray(d["scale"], dtype=float)
        std.n_features_in_ = len(std.center_)
        return std


def _rows(X):
    if isinstance(X, CrossSectionMatrix):
        X = X.values
    return np.asarray(X, dtype=float)


def fit_standardizer(X) -> RobustStandardizer:
    """Fit on a variables-by-columns matrix."""
    X = _rows(X)
    if X.ndim != 2 or X.shape[1] < 2:
        raise ValidationError("need a 2-d matrix with at least two columns")
    return RobustStandardizer().fit(X.T)


def apply_standardizer(std: RobustStandardizer, X) -> np.ndarray:
    return std.transform(_rows(X).T).T


def invert_standardizer(std: RobustStandardizer, X_std) -> np.ndarray:
    return std.inverse_transform(_rows(X_std).T).T


def write_matrix(values: np.ndarray, vocabulary_hash: str = "") -> str:
    """Header with dimensions and vocabulary hash, then row-major values."""
    n, m = values.shape
    buf = io.StringIO()
    buf.write(f"# rows={n} cols={m} vocabulary={vocabulary_hash}\n")
    for row in values:
        buf.write(",".join(repr(float(v)) for v in row))
        buf.write("\n")
    return buf.getvalue()


def read_matrix(text: str) -> tuple[np.ndarray, str]:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("#"):
        raise ValidationError("matrix file lacks its header line", 1)
    meta = dict(tok.split("=", 1) for tok in lines[0][1:].split())
    n, m = int(meta["rows"]), int(meta["cols"])
    body = [ln for ln in lines[1:] if ln]
    if len(body) != n:
        raise ValidationError(f"header declares {n} rows, found {len(body)}")
    values = np.array([[float(v) for v in ln.split(",")] for ln in body]).reshape(n, m)
    return values, meta.get("vocabulary", "")


def write_provenance(provenance) -> str:
    return "patient_id,day\n" + "".join(f"{p},{d}\n" for p, d in provenance)


def read_provenance(text: str) -> list[tuple[str, int]]:
    lines = text.splitlines()
    if not lines or lines[0] != "patient_id,day":
        raise ValidationError("provenance file lacks its header", 1)
    out = []
    for ln in lines[1:]:
        if ln:
            p, d = ln.rsplit(",", 1)
            out.append((p, int(d)))
    return out
