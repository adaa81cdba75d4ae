"""Synthetic linear non-Gaussian SCMs with known sources and outcome.

The data-generating process is ``X = (I - B)^-1 S`` with ``B`` strictly
lower-triangular, independent unit-variance non-Gaussian sources ``S`` and a
binary outcome ``Y ~ Bernoulli(logistic(w . S + b))`` that depends on a few
sources only. Because the outcome is linear on the log-odds scale, the true
interventional Shapley value of each source is available in closed form.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import expit

from ._validation import check_rng
from .exceptions import ValidationError
from .ingest import (
    CONDITION_CODE,
    MEASUREMENT,
    Demographics,
    EventRecord,
    PatientRecord,
)

FAMILIES = ("laplace", "uniform", "mixture", "gaussian")
_MIX_MU = 0.9


@dataclass
class SyntheticSCM:
    B: np.ndarray
    families: list[str]
    outcome_sources: np.ndarray
    outcome_weights: np.ndarray
    intercept: float = 0.0
    seed: int | None = None

    def __post_init__(self):
        self.B = np.asarray(self.B, dtype=float)
        self.outcome_sources = np.asarray(self.outcome_sources, dtype=int)
        self.outcome_weights = np.asarray(self.outcome_weights, dtype=float)
        if np.any(np.triu(self.B) != 0):
            raise ValidationError("B must be strictly lower-triangular")
        if sum(f == "gaussian" for f in self.families) > 1:
            raise ValidationError("at most one gaussian source is allowed")
        unknown = set(self.families) - set(FAMILIES)
        if unknown:
            raise ValidationError(f"unknown source families {sorted(unknown)}")

    @property
    def n_vars(self) -> int:
        return self.B.shape[0]

    @property
    def A_true(self) -> np.ndarray:
        return np.linalg.solve(np.eye(self.n_vars) - self.B, np.eye(self.n_vars))

    @property
    def weight_vector(self) -> np.ndarray:
        w = np.zeros(self.n_vars)
        w[self.outcome_sources] = self.outcome_weights
        return w

    def to_json(self) -> str:
        return json.dumps(
            {
                "kind": "linear_non_gaussian_scm",
                "n_vars": self.n_vars,
                "B": self.B.tolist(),
                "families": list(self.families),
                "outcome": {
                    "sources": self.outcome_sources.tolist(),
                    "weights": self.outcome_weights.tolist(),
                    "intercept": self.intercept,
                    "link": "logistic",
                },
                "seed": self.seed,
            },
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "SyntheticSCM":
        d = json.loads(text)
        o = d["outcome"]
        return cls(np.asarray(d["B"]), d["families"], o["sources"], o["weights"], o["intercept"], d["seed"])


@dataclass
class SyntheticDataset:
    X_true: np.ndarray
    S_true: np.ndarray
    Y: np.ndarray
    scm: SyntheticSCM
    seed: int | None = None
    probability: np.ndarray | None = field(default=None, repr=False)


def generate_scm(n_vars, edge_density=0.3, weight_range=1.0, rng=0, family="laplace") -> SyntheticSCM:
    """Random acyclic linear SCM in a fixed causal order.

    Edge weights have magnitude uniform in ``[0.25, weight_range]`` and a
    random sign. ``max(2, n_vars // 5)`` sources drive the outcome with
    weights of magnitude uniform in ``[0.5, 2]``.
    """
    if n_vars < 2:
        raise ValidationError("n_vars must be >= 2")
    if not 0 <= edge_density <= 1:
        raise ValidationError("edge_density must lie in [0, 1]")
    if weight_range < 0.25:
        raise ValidationError("weight_range must be >= 0.25")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = check_rng(rng)

    mask = np.tril(rng.random((n_vars, n_vars)) < edge_density, k=-1)
    mags = rng.uniform(0.25, weight_range, size=(n_vars, n_vars))
    signs = rng.choice([-1.0, 1.0], size=(n_vars, n_vars))
    B = np.where(mask, mags * signs, 0.0)

    n_out = min(n_vars, max(2, n_vars // 5))
    sources = np.sort(rng.choice(n_vars, size=n_out, replace=False))
    weights = rng.uniform(0.5, 2.0, size=n_out) * rng.choice([-1.0, 1.0], size=n_out)
    families = [family] * n_vars if isinstance(family, str) else list(family)
    return SyntheticSCM(B, families, sources, weights, 0.0, seed)


def _draw(family, n, rng):
    if family == "laplace":
        return rng.laplace(0.0, 1.0 / np.sqrt(2.0), n)
    if family == "uniform":
        return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), n)
    if family == "mixture":
        centers = rng.choice([-_MIX_MU, _MIX_MU], size=n)
        return centers + rng.normal(0.0, np.sqrt(1 - _MIX_MU**2), n)
    return rng.normal(0.0, 1.0, n)


def sample_dataset(scm: SyntheticSCM, n, rng=0) -> SyntheticDataset:
    """Draw ``n`` columns of zero-mean, unit-variance sources and their effects."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    seed = rng if isinstance(rng, (int, np.integer)) else None
    rng = check_rng(rng)
    S = np.vstack([_draw(f, n, rng) for f in scm.families])
    X = scm.A_true @ S
    p = expit(scm.outcome_weights @ S[scm.outcome_sources] + scm.intercept)
    Y = (rng.random(n) < p).astype(int)
    return SyntheticDataset(X, S, Y, scm, seed, p)


def _row_correlations(S_est, S_true):
    a = S_est - S_est.mean(axis=1, keepdims=True)
    b = S_true - S_true.mean(axis=1, keepdims=True)
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    if np.any(na == 0) or np.any(nb == 0):
        raise ValidationError("cannot match rows with zero variance")
    return (a / na[:, None]) @ (b / nb[:, None]).T


def match_sources(S_est, S_true):
    """Pair estimated with true sources by maximum total |correlation|.

    Returns ``(perm, signs, abs_corr)`` with ``S_est[i] ~ signs[i] *
    S_true[perm[i]]``. If ``S_est`` has more rows than ``S_true``, only
    the best ``len(S_true)`` estimated rows are paired; unpaired rows get
    ``perm = -1``, sign 0 and correlation ``nan``.
    """
    S_est, S_true = np.atleast_2d(S_est), np.atleast_2d(S_true)
    if S_est.shape[1] != S_true.shape[1]:
        raise ValidationError("estimated and true sources need the same column count")
    if S_est.shape[0] < S_true.shape[0]:
        raise ValidationError("fewer estimated than true sources")
    C = _row_correlations(S_est, S_true)
    rows, cols = linear_sum_assignment(-np.abs(C))
    k = S_est.shape[0]
    perm = np.full(k, -1)
    signs = np.zeros(k)
    corr = np.full(k, np.nan)
    perm[rows] = cols
    signs[rows] = np.sign(C[rows, cols])
    corr[rows] = np.abs(C[rows, cols])
    return perm, signs, corr


def amari_distance(P) -> float:
    """Zero exactly when ``P`` is a scaled, signed permutation matrix."""
    P = np.abs(np.asarray(P, dtype=float))
    if P.ndim != 2 or P.shape[0] != P.shape[1]:
        raise ValidationError("P must be square")
    if np.any(P.max(axis=1) == 0) or np.any(P.max(axis=0) == 0):
        raise ValidationError("P has an all-zero row or column")
    k = P.shape[0]
    rows = (P.sum(axis=1) / P.max(axis=1) - 1).sum()
    cols = (P.sum(axis=0) / P.max(axis=0) - 1).sum()
    return float((rows + cols) / (2 * k))


def true_ite(scm: SyntheticSCM, s_instance, background_mean) -> np.ndarray:
    """Closed-form interventional Shapley values on the log-odds scale."""
    s = np.asarray(s_instance, dtype=float)
    m = np.asarray(background_mean, dtype=float)
    if s.shape != (scm.n_vars,) or m.shape != (scm.n_vars,):
        raise ValidationError(f"instance and background mean must have length {scm.n_vars}")
    return scm.weight_vector * (s - m)


@dataclass
class RenderedCorpus:
    records: list[PatientRecord]
    index_days: np.ndarray
    variable_ids: list[str]
    code_variables: list[str]


def variable_name(i: int) -> str:
    return f"v{i:02d}"


def render_events(
    dataset: SyntheticDataset,
    span_days=365,
    rng=0,
    sparsity=0.9,
    code_fraction=0.25,
    drift=0.05,
    noise=0.0,
    rate_scale=0.2,
) -> RenderedCorpus:
    """Turn every dataset column into one synthetic patient's event stream.

    Each variable follows ``x + drift * (sin(2 pi (t - t0) / P + theta) -
    sin(theta))``, which equals the column value ``x`` at the index day
    ``t0`` (the middle of the span). Measurement variables are observed on
    each day with probability ``1 - sparsity`` (at least once), plus
    optional Gaussian ``noise``. The last ``round(code_fraction * n_vars)``
    variables are rendered as condition codes emitted by a Poisson process
    with daily rate ``rate_scale * softplus(trajectory)``.
    """
    if span_days < 30:
        raise ValidationError("span_days must be >= 30")
    rng = check_rng(rng)
    X = dataset.X_true
    n_vars, n = X.shape
    names = [variable_name(i) for i in range(n_vars)]
    n_code = int(round(code_fraction * n_vars))
    codes = set(names[n_vars - n_code:]) if n_code else set()
    days = np.arange(span_days)
    t0 = span_days // 2

    records = []
    for j in range(n):
        pid = f"p{j:06d}"
        periods = rng.uniform(span_days / 2, 2 * span_days, n_vars)
        phases = rng.uniform(0, 2 * np.pi, n_vars)
        traj = X[:, j, None] + drift * (
            np.sin(2 * np.pi * (days - t0) / periods[:, None] + phases[:, None]) - np.sin(phases)[:, None]
        )
        events = []
        for i, var in enumerate(names):
            if var in codes:
                counts = rng.poisson(rate_scale * np.logaddexp(0.0, traj[i]))
                events += [EventRecord(pid, int(d), CONDITION_CODE, var) for d in np.repeat(days, counts)]
            else:
                seen = rng.random(span_days) >= sparsity
                if not seen.any():
                    seen[rng.integers(span_days)] = True
                vals = traj[i, seen]
                if noise:
                    vals = vals + rng.normal(0.0, noise, vals.size)
                events += [EventRecord(pid, int(d), MEASUREMENT, var, float(v)) for d, v in zip(days[seen], vals)]
        if not events:
            continue
        by_mod = {}
        for e in events:
            by_mod.setdefault(e.modality, []).append(e)
        for m in by_mod:
            by_mod[m].sort(key=lambda e: e.day)
        span = (min(e.day for e in events), max(e.day for e in events))
        records.append(PatientRecord(pid, by_mod, Demographics(pid, "U", "U", -40 * 365), span))
    return RenderedCorpus(records, np.full(n, t0), names, sorted(codes))
