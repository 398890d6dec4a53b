import numpy as np
import pytest
from scipy.stats import invwishart, multivariate_normal

from parsimix.core import MixtureParameters, ParsimixError
from parsimix.covmodels import sufficient_stats
from parsimix.em import _log_dens
from parsimix.priors import (
    PriorConfig,
    PriorSpec,
    default_prior,
    log_prior,
    map_mstep,
    resolve_prior,
)


def data(seed=0, n=120, d=3):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, d)) @ rng.normal(size=(d, d)) + 2.0


def test_default_prior_hyperparameters():
    X = data()
    n, d = X.shape
    K = 3
    p = default_prior(X, K)
    S = (X - X.mean(axis=0)).T @ (X - X.mean(axis=0)) / n
    assert np.allclose(p.mu_p, X.mean(axis=0))
    assert p.kappa_p == 0.1 and p.nu_p == d + 2
    assert np.allclose(p.lambda_p, S / K ** (2 / d))
    q = default_prior(X, K, kappa=0.5, dof=7, scale_mult=2.0)
    assert (q.kappa_p, q.nu_p) == (0.5, 7.0) and np.allclose(q.lambda_p, 2 * p.lambda_p)


def test_default_prior_rank_deficient():
    X = data()
    X[:, 2] = X[:, 0]
    with pytest.raises(ParsimixError):
        default_prior(X, 2)
    with pytest.raises(ParsimixError):
        default_prior(X[:3], 2)


def test_prior_spec_validation():
    with pytest.raises(ValueError):
        PriorSpec(np.zeros(2), 0.0, 4, np.eye(2))
    with pytest.raises(ValueError):
        PriorSpec(np.zeros(2), 1.0, 0.5, np.eye(2))
    with pytest.raises(ValueError):
        PriorSpec(np.zeros(2), 1.0, 4, -np.eye(2))


def test_prior_round_trip_and_resolve():
    X = data()
    p = default_prior(X, 2)
    q = PriorSpec.from_dict(p.to_dict())
    assert np.allclose(q.lambda_p, p.lambda_p) and q.nu_p == p.nu_p
    assert resolve_prior(None, X, 2) is None
    assert resolve_prior(p, X, 5) is p
    r = resolve_prior(PriorConfig(), X, 4)
    assert np.allclose(r.lambda_p, default_prior(X, 4).lambda_p)
    with pytest.raises(TypeError):
        resolve_prior("default", X, 2)


def test_log_prior_matches_scipy():
    rng = np.random.default_rng(2)
    d, K = 3, 2
    prior = PriorSpec(rng.normal(size=d), 0.3, d + 3.5, np.eye(d) * 0.7 + 0.1)
    mean = rng.normal(size=(d, K))
    A = rng.normal(size=(K, d, d))
    cov = np.matmul(A, np.swapaxes(A, 1, 2)) + np.eye(d)
    params = MixtureParameters(np.full(K, 0.5), mean, cov)
    expected = sum(
        multivariate_normal(prior.mu_p, cov[k] / prior.kappa_p).logpdf(mean[:, k])
        + invwishart(df=prior.nu_p, scale=prior.lambda_p).logpdf(cov[k])
        for k in range(K)
    )
    assert np.isclose(log_prior(params, prior), expected, rtol=1e-12, atol=1e-10)


def test_log_density_matches_scipy():
    rng = np.random.default_rng(4)
    d, K = 3, 3
    X = rng.normal(size=(30, d))
    mean = rng.normal(size=(d, K))
    A = rng.normal(size=(K, d, d))
    cov = np.matmul(A, np.swapaxes(A, 1, 2)) + 0.5 * np.eye(d)
    pro = np.array([0.2, 0.5, 0.3])
    got = _log_dens(X, pro, mean, cov)
    for k in range(K):
        ref = np.log(pro[k]) + multivariate_normal(mean[:, k], cov[k]).logpdf(X)
        assert np.allclose(got[:, k], ref, rtol=1e-12, atol=1e-10)


def test_map_vvv_is_posterior_mode():
    # the MAP update maximises complete-data loglik plus log prior
    rng = np.random.default_rng(9)
    X = data(3, n=60)
    K = 2
    z = rng.dirichlet(np.ones(K), size=X.shape[0])
    prior = default_prior(X, K)
    stats = sufficient_stats(X, z)
    pro, mean, cov = map_mstep(stats, prior, "VVV")

    def objective(mean, cov):
        params = MixtureParameters(pro, mean, cov)
        logd = _log_dens(X, pro, mean, cov)
        return float((z * logd).sum()) + log_prior(params, prior)

    best = objective(mean, cov)
    for _ in range(30):
        dm = rng.normal(scale=1e-3, size=mean.shape)
        E = rng.normal(scale=1e-3, size=cov.shape)
        E = 0.5 * (E + np.swapaxes(E, 1, 2))
        assert objective(mean + dm, cov + E) <= best + 1e-12


def test_map_means_shrink_towards_prior_mean():
    X = data()
    prior = default_prior(X, 1)
    z = np.ones((X.shape[0], 1))
    stats = sufficient_stats(X, z)
    _, mean, cov = map_mstep(stats, prior, "VVV")
    n = X.shape[0]
    expected = (n * X.mean(axis=0) + 0.1 * prior.mu_p) / (n + 0.1)
    assert np.allclose(mean[:, 0], expected)
    R = prior.lambda_p + stats.W[0]
    assert np.allclose(cov[0], R / (n + prior.nu_p + 3 + 2))


def test_map_covariances_by_hand():
    # n=6, d=2, K=2 hard partition; formulas written out per component
    X = np.array([[0.0, 1.0], [1.0, 3.0], [2.0, 2.0], [6.0, 5.0], [7.0, 7.0], [9.0, 6.0]])
    z = np.repeat(np.eye(2), 3, axis=0)
    prior = PriorSpec(np.array([4.0, 4.0]), 0.2, 3.5, np.array([[0.6, 0.1], [0.1, 0.4]]))
    d = 2
    R, m, means = [], [], []
    for k in range(2):
        pts = X[3 * k:3 * k + 3]
        xb = pts.mean(axis=0)
        W = (pts - xb).T @ (pts - xb)
        diff = (xb - prior.mu_p)[:, None]
        R.append(prior.lambda_p + W + (0.2 * 3 / 3.2) * diff @ diff.T)
        m.append(3 + 3.5 + d + 2)
        means.append((3 * xb + 0.2 * prior.mu_p) / 3.2)
    stats = sufficient_stats(X, z)
    expected = {
        "VVV": [R[0] / m[0], R[1] / m[1]],
        "VVI": [np.diag(np.diag(R[0]) / m[0]), np.diag(np.diag(R[1]) / m[1])],
        "EEE": [(R[0] + R[1]) / (m[0] + m[1])] * 2,
        "EII": [np.eye(2) * np.trace(R[0] + R[1]) / (d * (m[0] + m[1]))] * 2,
    }
    for code, covs in expected.items():
        pro, mean, cov = map_mstep(stats, prior, code)
        assert np.allclose(pro, [0.5, 0.5])
        assert np.allclose(mean.T, means, rtol=0, atol=1e-12)
        assert np.allclose(cov, covs, rtol=0, atol=1e-12), code
