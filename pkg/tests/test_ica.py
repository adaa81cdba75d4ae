import warnings

import numpy as np
import pytest

from causal_sources import ica
from causal_sources.exceptions import ValidationError
from causal_sources.oracle import amari_distance, match_sources


@pytest.fixture(scope="module")
def laplace_mix():
    rng = np.random.default_rng(2024)
    S = rng.laplace(scale=1 / np.sqrt(2), size=(4, 20000))
    A = rng.normal(size=(4, 4)) + 2 * np.eye(4)
    return A, S, A @ S


@pytest.fixture(scope="module")
def laplace_model(laplace_mix):
    return ica.fit_ica(laplace_mix[2], 4, seed=0)


def _cov(Z):
    Zc = Z - Z.mean(axis=1, keepdims=True)
    return Zc @ Zc.T / Z.shape[1]


def test_whiten_already_white(rng):
    X = rng.normal(size=(5, 4000))
    X = np.linalg.cholesky(np.linalg.inv(_cov(X))).T @ (X - X.mean(axis=1, keepdims=True))
    _, Z = ica.whiten(X, 5)
    assert np.max(np.abs(_cov(Z) - np.eye(5))) < 1e-6


def test_whiten_diagonal_scaling(rng):
    X = np.diag([2.0, 1.0]) @ rng.normal(size=(2, 10000))
    w, Z = ica.whiten(X, 2)
    assert np.allclose(Z.var(axis=1), 1.0, atol=1e-10)
    assert np.allclose(np.sort(w.eigenvalues), np.sort(np.diag(_cov(X))), rtol=0.05)


def test_whiten_random_matrix(rng):
    X = rng.normal(size=(10, 10)) @ rng.normal(size=(10, 5000))
    _, Z = ica.whiten(X, 10)
    assert np.max(np.abs(_cov(Z) - np.eye(10))) < 1e-6


def test_whiten_rank_deficiency(rng):
    X = rng.normal(size=(3, 500))
    X = np.vstack([X, X[0] + X[1]])
    with pytest.warns(ica.RankWarning):
        w, Z = ica.whiten(X, 4)
    assert w.k == 3 and w.requested_k == 4
    with pytest.raises(ValidationError):
        ica.whiten(X, 4, strict=True)
    with pytest.raises(ValidationError):
        ica.whiten(X, 0)


def test_fastica_identity_mixing_is_signed_permutation():
    rng = np.random.default_rng(5)
    S = rng.laplace(size=(3, 50000))
    w, Z = ica.whiten(S, 3)
    res = ica.fastica(Z, rng=1)
    assert res.converged
    U = res.rotation @ w.projection
    U = U / np.linalg.norm(U, axis=1, keepdims=True)
    assert np.all(np.abs(U).max(axis=1) > 0.99)


def test_fastica_two_gaussians_terminates_and_flags():
    rng = np.random.default_rng(6)
    _, Z = ica.whiten(np.array([[2.0, 1.0], [1.0, 2.0]]) @ rng.normal(size=(2, 50000)), 2)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        res = ica.fastica(Z, max_iter=50, rng=0)
    flagged = not res.converged or res.gaussian_like.any()
    assert flagged and any(issubclass(c.category, ica.GaussianityWarning) for c in caught)


def test_fastica_uniform_2x2_amari():
    rng = np.random.default_rng(7)
    S = rng.uniform(-np.sqrt(3), np.sqrt(3), size=(2, 50000))
    A = np.array([[2.0, 1.0], [1.0, 2.0]])
    model = ica.fit_ica(A @ S, 2, seed=0)
    assert amari_distance(model.unmixing @ A) < 0.05


def test_fastica_nonconvergence_is_reported(laplace_mix):
    _, Z = ica.whiten(laplace_mix[2], 4)
    with pytest.warns(ica.ConvergenceWarning):
        res = ica.fastica(Z, tol=1e-15, max_iter=3, rng=0)
    assert not res.converged and res.n_iter == 3


def test_fastica_exp_contrast(laplace_mix):
    A, _, X = laplace_mix
    model = ica.fit_ica(X, 4, contrast="exp", seed=0)
    assert amari_distance(model.unmixing @ A) < 0.05
    with pytest.raises(ValidationError):
        ica.fit_ica(X, 4, contrast="cube", seed=0)


def test_rotation_orthogonal(laplace_model):
    R = laplace_model.rotation
    assert np.max(np.abs(R @ R.T - np.eye(4))) < 1e-8


def test_compose_model_properties(laplace_mix, laplace_model):
    m = laplace_model
    assert np.max(np.abs(m.unmixing @ m.mixing - np.eye(4))) < 1e-6
    peaks = m.mixing[np.argmax(np.abs(m.mixing), axis=0), np.arange(m.k)]
    assert np.all(peaks > 0)
    X = laplace_mix[2]
    Xc = X - X.mean(axis=1, keepdims=True)
    S = ica.transform(m, X).values
    assert np.linalg.norm(m.mixing @ S - Xc) / np.linalg.norm(Xc) < 1e-6


def test_recovered_sources_white_and_uncorrelated(laplace_mix, laplace_model):
    S = ica.transform(laplace_model, laplace_mix[2]).values
    assert np.allclose(S.var(axis=1), 1.0, atol=1e-3)
    C = np.corrcoef(S)
    assert np.max(np.abs(C - np.diag(np.diag(C)))) < 0.05


def test_transform_definitions(laplace_mix, laplace_model):
    X = laplace_mix[2]
    w, Z = ica.whiten(X, 4)
    fitted = laplace_model.rotation @ Z
    assert np.array_equal(ica.transform(laplace_model, X).values, laplace_model.unmixing @ (X - laplace_model.mean[:, None]))
    assert np.allclose(ica.transform(laplace_model, X).values, fitted, atol=1e-10)
    assert np.allclose(ica.transform(laplace_model, laplace_model.mean[:, None]).values, 0.0)


def test_heldout_sources_match_truth(laplace_mix, laplace_model):
    A = laplace_mix[0]
    S_new = np.random.default_rng(99).laplace(scale=1 / np.sqrt(2), size=(4, 5000))
    _, _, corr = match_sources(ica.transform(laplace_model, A @ S_new).values, S_new)
    assert np.all(corr > 0.95)


def test_seed_indeterminacy_only_permutation_and_sign(laplace_mix):
    X = laplace_mix[2]
    a = ica.transform(ica.fit_ica(X, 4, seed=1), X).values
    b = ica.transform(ica.fit_ica(X, 4, seed=2), X).values
    _, _, corr = match_sources(a, b)
    assert np.all(corr > 0.95)


def test_signature_identity_and_empty():
    w = ica.WhiteningTransform(np.zeros(3), np.eye(3), np.eye(3), np.ones(3), 3)
    m = ica.compose_model(w, np.eye(3))
    for i in range(3):
        assert ica.signature(m, i, 1, ["a", "b", "c"]) == [("abc"[i], 1.0)]
    assert ica.signature(m, 0, 0) == []
    with pytest.raises(ValidationError):
        ica.signature(m, 3)


def test_model_json_round_trip_bit_exact(laplace_model):
    back = ica.ICAModel.from_json(laplace_model.to_json())
    assert np.array_equal(back.unmixing, laplace_model.unmixing)
    assert np.array_equal(back.mixing, laplace_model.mixing)
    assert back.convergence == laplace_model.convergence


def test_fit_is_deterministic(laplace_mix):
    a = ica.fit_ica(laplace_mix[2], 4, seed=3)
    b = ica.fit_ica(laplace_mix[2], 4, seed=3)
    assert a.to_json() == b.to_json()


def test_sklearn_wrapper(laplace_mix):
    X = laplace_mix[2].T
    est = ica.SourceICA(n_components=4, random_state=0).fit(X)
    S = est.transform(X)
    assert S.shape == (X.shape[0], 4) and est.converged_
    assert np.allclose(est.inverse_transform(S), X, atol=1e-8)
    assert est.get_params()["n_components"] == 4
