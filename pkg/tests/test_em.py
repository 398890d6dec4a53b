import numpy as np
import pytest

from conftest import blobs
from parsimix.core import FITTED_CODES, EMFailure, ModelCodeError, ModelSpec, MixtureParameters
from parsimix.em import (
    EmControl,
    e_step,
    em_chain,
    fit,
    initial_partitions,
    initialize,
)
from parsimix.priors import default_prior, log_prior


def adjusted_rand(a, b):
    # pair-counting agreement, used only to judge cluster recovery
    from math import comb

    table = np.zeros((a.max() + 1, b.max() + 1), dtype=int)
    np.add.at(table, (a, b), 1)
    s = sum(comb(int(v), 2) for v in table.ravel())
    sa = sum(comb(int(v), 2) for v in table.sum(axis=1))
    sb = sum(comb(int(v), 2) for v in table.sum(axis=0))
    expected = sa * sb / comb(a.size, 2)
    return (s - expected) / (0.5 * (sa + sb) - expected)


def test_control_validation():
    with pytest.raises(ValueError):
        EmControl(rel_tol=0)
    with pytest.raises(ValueError):
        EmControl(n_restarts=0)
    with pytest.raises(ValueError):
        EmControl(init_strategy="nope")


def test_e_step_stable_under_underflow():
    params = MixtureParameters(np.array([0.5, 0.5]), np.array([[0.0, 1.0]]), np.array([[[1e-4]], [[1e-4]]]))
    z, ll = e_step(np.array([[500.0], [0.4]]), params)
    assert np.all(np.isfinite(z)) and np.allclose(z.sum(axis=1), 1.0, atol=1e-12)
    assert z[0, 1] == 1.0
    assert np.isfinite(ll)


def test_single_component_eee_is_closed_form_mle():
    rng = np.random.default_rng(8)
    X = rng.normal(size=(200, 3)) @ rng.normal(size=(3, 3)) + 5.0
    res = fit(X, ModelSpec("EEE", 1))
    mu = X.mean(axis=0)
    S = (X - mu).T @ (X - mu) / X.shape[0]
    assert np.allclose(res.params.mean[:, 0], mu, rtol=0, atol=1e-10)
    assert np.allclose(res.params.cov[0], S, rtol=0, atol=1e-10)
    sign, logdet = np.linalg.slogdet(S)
    ll = -0.5 * X.shape[0] * (3 * np.log(2 * np.pi) + logdet + 3)
    assert np.isclose(res.loglik, ll, rtol=0, atol=1e-8)
    assert res.df == 0 + 3 + 6


@pytest.mark.parametrize("code", FITTED_CODES)
def test_engines_agree(code):
    X, labels = blobs(1, n=150, d=3, K=3)
    X = np.round(X, 1)
    prior = default_prior(X, 3)
    a = em_chain(X, code, labels, prior, engine="compiled")
    b = em_chain(X, code, labels, prior, engine="numpy")
    assert a.iterations == b.iterations and a.converged == b.converged
    assert np.isclose(a.objective, b.objective, rtol=1e-10)
    assert np.allclose(a.cov, b.cov, rtol=1e-7, atol=1e-9)
    assert np.allclose(a.z, b.z, atol=1e-8)


def test_objective_includes_log_prior():
    X, labels = blobs(2, n=120, d=2, K=2)
    prior = default_prior(X, 2)
    res = fit(X, ModelSpec("VVV", 2), prior)
    assert np.isclose(res.objective, res.loglik + log_prior(res.params, prior), rtol=1e-12)
    _, ll = e_step(X, res.params)
    assert np.isclose(res.loglik, ll, rtol=1e-12)


def test_recovers_separated_clusters():
    X, labels = blobs(3, n=300, d=2, K=3, spread=8.0)
    res = fit(X, ModelSpec("VVV", 3))
    assert res.converged
    assert adjusted_rand(labels, res.classification - 1) > 0.95


def test_duplicate_rows_equal_weights():
    rng = np.random.default_rng(4)
    base = np.round(rng.normal(size=(40, 2)) * 2, 0)
    reps = rng.integers(1, 4, size=40)
    X = np.repeat(base, reps, axis=0)
    labels = [np.arange(X.shape[0]) % 2]
    a = fit(X, ModelSpec("VVI", 2), default_prior(X, 2), partitions=labels, engine="numpy")
    dup = em_chain(X, "VVI", labels[0], default_prior(X, 2), engine="numpy")
    assert np.isclose(a.objective, dup.objective, rtol=1e-10)
    assert a.z.shape == (X.shape[0], 2)


def test_weighted_fit_equals_replicated_rows():
    rng = np.random.default_rng(6)
    X = rng.normal(size=(60, 2))
    X[:30] += 4
    w = rng.integers(1, 4, size=60).astype(float)
    Xr = np.repeat(X, w.astype(int), axis=0)
    init = MixtureParameters(np.array([0.5, 0.5]), np.array([[4.0, 0.0], [4.0, 0.0]]), np.stack([np.eye(2)] * 2))
    a = fit(X, ModelSpec("VVV", 2), init_params=init, weights=w)
    b = fit(Xr, ModelSpec("VVV", 2), init_params=init)
    assert np.allclose(a.params.mean, b.params.mean, atol=1e-8)
    assert np.isclose(a.loglik, b.loglik, rtol=1e-10)


def test_fit_bit_reproducible():
    X, _ = blobs(5, n=200, d=3, K=3)
    spec = ModelSpec("VEV", 3)
    a = fit(X, spec, default_prior(X, 3), EmControl(seed=7))
    b = fit(X, spec, default_prior(X, 3), EmControl(seed=7))
    assert a.loglik == b.loglik
    assert np.array_equal(a.params.cov, b.params.cov) and np.array_equal(a.z, b.z)


def test_initial_partitions_distinct_and_seeded():
    X, _ = blobs(6, n=90, d=2, K=3)
    ctl = EmControl(seed=3, n_restarts=8)
    parts = initial_partitions(X, 3, ctl)
    assert parts[0][0] == 0
    assert all(np.bincount(p, minlength=3).min() > 0 for _, p in parts)
    again = initial_partitions(X, 3, ctl)
    assert all(np.array_equal(p, q) for (_, p), (_, q) in zip(parts, again))
    rp = initialize(X, 3, EmControl(init_strategy="random_partition"))
    assert set(rp.tolist()) == {0, 1, 2}


def test_named_only_and_failure_paths():
    X = np.random.default_rng(0).normal(size=(20, 2))
    with pytest.raises(ModelCodeError):
        fit(X, ModelSpec("EVE", 2))
    with pytest.raises(ValueError):
        fit(X, ModelSpec("VVV", 30))
    # two exact points per component leave singular scatter without a prior
    pts = np.repeat(np.array([[0.0, 0.0], [1.0, 1.0], [5.0, 0.0], [6.0, 1.0]]), 3, axis=0)
    with pytest.raises(EMFailure, match="prior"):
        fit(pts, ModelSpec("VVV", 2), partitions=[np.array([0] * 6 + [1] * 6)])
    res = fit(pts, ModelSpec("VVV", 2), default_prior(pts, 2), partitions=[np.array([0] * 6 + [1] * 6)])
    assert res.converged
