"""EM estimation for parsimonious Gaussian mixtures."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .core import (
    FITTED_CODES,
    DataMatrix,
    EMFailure,
    FitResult,
    MixtureParameters,
    ModelCodeError,
    ModelSpec,
    SingularCovarianceError,
    map_classify,
)
from .covmodels import NK_MIN, count_free_params, mstep_covariance, sufficient_stats
from .priors import PriorSpec, log_prior_arrays, map_mstep

log = logging.getLogger(__name__)

LOG_2PI = math.log(2.0 * math.pi)
INIT_STRATEGIES = ("kmeans_pp", "random_partition", "given_partition")
LLOYD_MAX_ITER = 25


@dataclass(frozen=True)
class EmControl:
    rel_tol: float = 1e-8
    max_iter: int = 1000
    n_restarts: int = 32
    init_strategy: str = "kmeans_pp"
    seed: int = 0

    def __post_init__(self):
        if not self.rel_tol > 0:
            raise ValueError("rel_tol must be positive")
        if self.max_iter < 1 or self.n_restarts < 1:
            raise ValueError("max_iter and n_restarts must be at least 1")
        if self.init_strategy not in INIT_STRATEGIES:
            raise ValueError(f"init_strategy must be one of {INIT_STRATEGIES}")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


def _values(x) -> np.ndarray:
    if isinstance(x, DataMatrix):
        return x.values
    arr = np.asarray(x, dtype=float)
    return arr[:, None] if arr.ndim == 1 else arr


def _cholesky(cov):
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise SingularCovarianceError("covariance is not positive definite") from exc
    diag = np.diagonal(chol, axis1=1, axis2=2)
    if not ((diag > 0).all() and np.isfinite(diag).all()):
        raise SingularCovarianceError("covariance is not positive definite")
    return chol


def _log_dens(X, pro, mean, cov, chol=None, linv=None):
    """``log(pro_k) + log phi(x_i; mean_k, cov_k)`` as an (n, K) array."""
    n, d = X.shape
    K = pro.shape[0]
    if chol is None:
        chol = _cholesky(cov)
    if linv is None:
        linv = np.linalg.inv(chol)
    # whitened residuals L_k^-1 (x_i - mu_k) for all k in one product
    shift = np.einsum("kij,jk->ki", linv, mean)
    sol = (X @ linv.reshape(K * d, d).T).reshape(n, K, d) - shift[None]
    maha = np.einsum("nkd,nkd->nk", sol, sol)
    half_logdet = np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    logpro = np.log(pro)
    return (logpro - 0.5 * d * LOG_2PI - half_logdet)[None, :] - 0.5 * maha


def _normalise(logd, weights=None):
    top = logd.max(axis=1, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    shifted = np.exp(logd - top)
    total = shifted.sum(axis=1, keepdims=True)
    z = shifted / total
    rowll = np.log(total[:, 0]) + top[:, 0]
    ll = float(rowll.sum() if weights is None else weights @ rowll)
    return z, ll


def log_density_components(x, params: MixtureParameters) -> np.ndarray:
    """n x K table of ``log(pi_k) + log N(x_i; mu_k, Sigma_k)`` via Cholesky factors."""
    X = _values(x)
    if X.shape[1] != params.d:
        raise ValueError(f"data has {X.shape[1]} columns, parameters have d={params.d}")
    return _log_dens(X, params.pro, params.mean, params.cov)


def e_step(x, params: MixtureParameters, weights=None):
    """Posterior membership probabilities and the mixture log-likelihood.

    Uses the log-sum-exp shift per row, so rows of ``z`` sum to one even
    when every component density underflows.
    """
    logd = log_density_components(x, params)
    return _normalise(logd, None if weights is None else np.asarray(weights, dtype=float))


def _seed_rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)))


def _kmeans_pp(X, K, rng, counts=None):
    """k-means++ seeding and Lloyd steps on rows carrying multiplicities ``counts``."""
    n = X.shape[0]
    w = np.ones(n) if counts is None else np.asarray(counts, dtype=float)
    X = X - (w @ X) / w.sum()
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[rng.choice(n, p=w / w.sum())]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for j in range(1, K):
        mass = w * d2
        total = mass.sum()
        idx = rng.choice(n, p=w / w.sum()) if total <= 0 else rng.choice(n, p=mass / total)
        centers[j] = X[idx]
        d2 = np.minimum(d2, ((X - centers[j]) ** 2).sum(axis=1))
    labels = None
    sq = (X**2).sum(axis=1)
    for _ in range(LLOYD_MAX_ITER):
        dist = sq[:, None] - 2.0 * (X @ centers.T) + (centers**2).sum(axis=1)[None, :]
        new = np.argmin(dist, axis=1)
        counts_k = np.bincount(new, minlength=K)
        for j in np.flatnonzero(counts_k == 0):
            # hand the empty cluster the row farthest from its own centre
            own = dist[np.arange(n), new]
            movable = counts_k[new] > 1
            far = int(np.argmax(np.where(movable, own, -np.inf)))
            counts_k[new[far]] -= 1
            new[far] = j
            counts_k[j] = 1
            dist[far] = np.inf
            dist[far, j] = 0.0
        if labels is not None and np.array_equal(new, labels):
            break
        labels = new
        onehot = _one_hot(labels, K) * w[:, None]
        centers = (onehot.T @ X) / onehot.sum(axis=0)[:, None]
    return labels


def _random_partition(n, K, rng):
    labels = rng.integers(K, size=n)
    first = rng.permutation(n)[:K]
    labels[first] = np.arange(K)
    return labels


def initialize(x, K: int, control: EmControl, restart_index: int = 0) -> np.ndarray:
    """Initial hard partition as 0-based labels, reproducible from ``(seed, restart_index)``."""
    X = _values(x)
    n = X.shape[0]
    if K > n:
        raise ValueError(f"cannot split {n} observations into {K} components")
    rng = _seed_rng(control.seed, restart_index)
    if control.init_strategy == "random_partition":
        return _random_partition(n, K, rng)
    if control.init_strategy == "given_partition":
        raise ValueError("given_partition requires an explicit partition")
    # seeding on sorted unique rows makes the partition independent of row order
    Xu, inverse, counts = _compress(X)
    if Xu.shape[0] < K:
        return _kmeans_pp(X, K, rng)
    return _kmeans_pp(Xu, K, rng, counts)[inverse]


def mstep(X, z, code: str, prior: Optional[PriorSpec] = None, weights=None, outer=None):
    """Parameter update from responsibilities; returns ``(pro, mean, cov)``."""
    stats = sufficient_stats(X, z, weights, outer)
    n = float(stats.nk.sum())
    if prior is None:
        for k, nk in enumerate(stats.nk):
            if nk < NK_MIN:
                raise SingularCovarianceError(f"component {k + 1} is empty", k + 1)
        return stats.nk / n, stats.xbar, mstep_covariance(code, stats)
    if np.any(stats.nk <= 0):
        k = int(np.flatnonzero(stats.nk <= 0)[0])
        raise SingularCovarianceError(f"component {k + 1} is empty", k + 1)
    return map_mstep(stats, prior, code, n)


@dataclass
class ChainResult:
    pro: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    z: np.ndarray
    loglik: float
    objective: float
    iterations: int
    converged: bool
    trace: list = field(default_factory=list)


def _one_hot(labels, K=None):
    K = int(labels.max()) + 1 if K is None else K
    z = np.zeros((labels.shape[0], K))
    z[np.arange(labels.shape[0]), labels] = 1.0
    return z


def _outer(X):
    return (X[:, :, None] * X[:, None, :]).reshape(X.shape[0], -1)


def _shift_prior(prior, centre):
    if prior is None:
        return None
    return PriorSpec(prior.mu_p - centre, prior.kappa_p, prior.nu_p, prior.lambda_p)


class _Chain:
    """Array implementation of one EM chain, run in centred coordinates.

    Every quantity involved is invariant to a common shift of data, means
    and prior mean, and centring keeps the one-product scatter accurate.
    """

    def __init__(self, X, code, init, prior, control, weights):
        self.centre = X.mean(axis=0)
        self.X = X - self.centre
        self.outer = _outer(self.X)
        self.code = code
        self.prior = _shift_prior(prior, self.centre)
        self.control = control
        self.weights = weights
        self.trace = []
        self.iterations = 0
        self.converged = False
        if isinstance(init, MixtureParameters):
            self.params = (init.pro, init.mean - self.centre[:, None], init.cov)
        else:
            z0 = np.asarray(init)
            if z0.ndim == 1:
                z0 = _one_hot(z0.astype(int))
            self.params = mstep(self.X, z0, code, self.prior, weights, self.outer)
        self._evaluate()

    def _evaluate(self):
        pro, mean, cov = self.params
        chol = _cholesky(cov)
        linv = np.linalg.inv(chol)
        self.z, self.loglik = _normalise(_log_dens(self.X, pro, mean, cov, chol, linv), self.weights)
        obj = self.loglik
        if self.prior is not None:
            obj += log_prior_arrays(mean, cov, self.prior, chol, linv)
        if not np.isfinite(obj):
            raise SingularCovarianceError("objective is not finite")
        self.trace.append(obj)
        self.objective = obj

    def advance(self):
        tol = self.control.rel_tol
        while self.iterations < self.control.max_iter:
            prev = self.objective
            self.params = mstep(self.X, self.z, self.code, self.prior, self.weights, self.outer)
            self.iterations += 1
            self._evaluate()
            if abs(self.objective - prev) / (1.0 + abs(self.objective)) < tol:
                self.converged = True
                break
        return self

    def result(self) -> ChainResult:
        pro, mean, cov = self.params
        return ChainResult(
            pro, mean + self.centre[:, None], cov, self.z, self.loglik, self.objective,
            self.iterations, self.converged, list(self.trace),
        )


def _compiled_chain(X, code, init, prior, control, weights) -> ChainResult:
    from . import _kernels

    n, d = X.shape
    centre = X.mean(axis=0)
    Xc = np.ascontiguousarray(X - centre)
    w = np.ones(n) if weights is None else np.ascontiguousarray(weights, dtype=float)
    if isinstance(init, MixtureParameters):
        K = init.K
        pro, mean, cov = init.pro.copy(), init.mean - centre[:, None], init.cov.copy()
        z = np.zeros((n, K))
    else:
        z = np.asarray(init)
        z = _one_hot(z.astype(int)) if z.ndim == 1 else np.array(z, dtype=float)
        K = z.shape[1]
        pro, mean, cov = np.empty(K), np.empty((d, K)), np.empty((K, d, d))
    mean = np.ascontiguousarray(mean)
    trace = np.empty(control.max_iter + 1)
    if prior is None:
        pargs = (False, np.zeros(d), 1.0, float(d), np.eye(d), np.eye(d), 0.0)
    else:
        p = _shift_prior(prior, centre)
        pargs = (True, p.mu_p, p.kappa_p, p.nu_p, p.lambda_p, p.cholesky_scale, p.iw_log_const)
    status, iterations, converged, n_trace, ll, obj = _kernels.run_chain(
        _kernels.features(Xc), d, w, z, pro, mean, cov, isinstance(init, MixtureParameters), _kernels.CODE_IDS[code],
        *pargs, control.rel_tol, control.max_iter, trace,
    )
    if status == _kernels.EMPTY:
        raise SingularCovarianceError(f"{code}: a component became empty")
    if status != _kernels.OK:
        raise SingularCovarianceError(f"{code}: covariance became singular")
    return ChainResult(pro, mean + centre[:, None], cov, z, ll, obj, iterations, converged, trace[:n_trace].tolist())


ENGINES = ("compiled", "numpy")


def em_chain(
    x,
    code: str,
    init,
    prior: Optional[PriorSpec] = None,
    control: EmControl = EmControl(),
    weights=None,
    engine: str = "compiled",
) -> ChainResult:
    """Run one EM chain from a partition (1-d integer labels), responsibilities or parameters.

    The monitored objective is the log-likelihood, plus the log prior when a
    prior is given; ``trace`` records it after every E-step. ``engine``
    picks the compiled loop or the plain array implementation; both follow
    the same updates.
    """
    X = _values(x)
    code = ModelSpec(code, 1).code
    if code not in FITTED_CODES:
        raise ModelCodeError(f"model {code} is named but not fitted (no closed-form M-step)")
    w = None if weights is None else np.asarray(weights, dtype=float)
    if engine == "compiled":
        return _compiled_chain(X, code, init, prior, control, w)
    if engine != "numpy":
        raise ValueError(f"engine must be one of {ENGINES}")
    return _Chain(X, code, init, prior, control, w).advance().result()


def _compress(X, weights=None):
    """Unique rows of ``X``, the row-to-unique index and the summed weights."""
    Xu, inverse = np.unique(X, axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)
    w = np.ones(X.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    return Xu, inverse, np.bincount(inverse, weights=w, minlength=Xu.shape[0])


def _collapse_rows(z, inverse, wu, weights=None):
    """Weight-averaged responsibilities of each group of identical rows."""
    w = np.ones(z.shape[0]) if weights is None else np.asarray(weights, dtype=float)
    out = np.zeros((wu.shape[0], z.shape[1]))
    np.add.at(out, inverse, z * w[:, None])
    empty = wu <= 0
    out[~empty] /= wu[~empty, None]
    if empty.any():
        # rows carrying no weight keep any valid membership
        out[np.flatnonzero(empty)] = z[np.unique(inverse, return_index=True)[1][empty]]
    return out


def _canonical_partition(labels):
    _, first = np.unique(labels, return_index=True)
    order = np.argsort(first)
    remap = np.empty(order.size, dtype=int)
    remap[order] = np.arange(order.size)
    return remap[labels].tobytes()


def initial_partitions(x, K: int, control: EmControl):
    """Distinct initial partitions in restart order, as ``(restart_index, labels)``."""
    seen = set()
    out = []
    for r in range(control.n_restarts):
        labels = initialize(x, K, control, r)
        key = _canonical_partition(labels)
        if key in seen:
            continue
        seen.add(key)
        out.append((r, labels))
    return out


def bic_value(loglik: float, df: int, n: int) -> float:
    return 2.0 * loglik - df * math.log(n)


def icl_value(bic: float, z: np.ndarray, labels: np.ndarray) -> float:
    picked = z[np.arange(z.shape[0]), np.asarray(labels) - 1]
    if np.any(picked <= 0):
        raise ValueError("a MAP responsibility is zero; responsibilities are corrupted")
    return float(bic + 2.0 * np.log(picked).sum())


def build_result(X, spec: ModelSpec, chain: ChainResult, prior) -> FitResult:
    n = X.shape[0]
    df = count_free_params(spec.code, X.shape[1], spec.K)
    bic = bic_value(chain.loglik, df, n)
    labels = map_classify(chain.z)
    return FitResult(
        model=spec,
        params=MixtureParameters(chain.pro, chain.mean, chain.cov, spec.code),
        loglik=chain.loglik,
        df=df,
        bic=bic,
        icl=icl_value(bic, chain.z, labels),
        z=chain.z,
        classification=labels,
        iterations=chain.iterations,
        converged=chain.converged,
        prior_used=prior,
        objective=chain.objective,
        n=n,
    )


def fit(
    x,
    spec: ModelSpec,
    prior: Optional[PriorSpec] = None,
    control: EmControl = EmControl(),
    partitions=None,
    init_params: Optional[MixtureParameters] = None,
    weights=None,
    engine: str = "compiled",
) -> FitResult:
    """Fit one parsimonious mixture by EM with restarts.

    Parameters
    ----------
    x : DataMatrix or array (n, d)
    spec : ModelSpec
        Code must be in the fitted set.
    prior : PriorSpec, optional
        Switches the M-step to posterior-mode updates.
    control : EmControl
    partitions : list of label arrays, optional
        Explicit initial partitions (0-based); overrides the control's
        initialisation strategy.
    init_params : MixtureParameters, optional
        Start a single chain from these parameters instead of partitions.
    weights : array (n,), optional
        Per-observation likelihood weights.
    engine : {"compiled", "numpy"}
        Implementation of the EM loop.

    Returns
    -------
    FitResult
        The chain with the highest final objective; ties go to the earliest
        restart. ``loglik`` is the log-likelihood at the returned parameters.
    """
    X = _values(x)
    if spec.code not in FITTED_CODES:
        raise ModelCodeError(f"model {spec.code} is named but not fitted (no closed-form M-step)")
    if spec.K > X.shape[0]:
        raise ValueError(f"K={spec.K} exceeds n={X.shape[0]}")

    if init_params is not None:
        starts = [(0, init_params)]
    elif partitions is not None:
        starts = list(enumerate(partitions))
    elif control.init_strategy == "given_partition":
        raise ValueError("given_partition strategy needs explicit partitions")
    else:
        starts = initial_partitions(X, spec.K, control)

    # repeated rows collapse into one weighted row; the likelihood is unchanged
    Xu, inverse, wu = _compress(X, weights)
    compressed = []
    for r, start in starts:
        if not isinstance(start, MixtureParameters):
            start = _collapse_rows(_one_hot(np.asarray(start, dtype=int), spec.K), inverse, wu, weights)
        compressed.append((r, start))
    starts = compressed
    chains = []
    failures = []
    for r, start in starts:
        try:
            chains.append((r, em_chain(Xu, spec.code, start, prior, control, wu, engine)))
        except SingularCovarianceError as exc:
            failures.append((r, str(exc)))
    best = None
    for r, chain in chains:
        if best is None or chain.objective > best.objective:
            best = chain
    if best is None:
        hint = "" if prior is not None else "; consider fitting with a prior (--prior default)"
        raise EMFailure(
            f"all {len(starts)} EM chains for {spec} failed with singular covariances"
            f" (first: {failures[0][1]}){hint}"
        )
    if failures:
        log.debug("%s: %d of %d chains failed", spec, len(failures), len(starts))
    best.z = best.z[inverse]
    return build_result(X, spec, best, prior)
