"""Conjugate prior regularisation of mixture estimates.

The prior is placed independently on every component: a Gaussian on the
mean given the covariance, ``N(mu_p, Sigma_k / kappa_p)``, and an inverse
Wishart on the covariance with ``nu_p`` degrees of freedom and scale
``lambda_p``, whose kernel is ``exp(-tr(Sigma_k^-1 lambda_p) / 2)``. Weights
get a uniform Dirichlet, which only adds a constant.

With that prior the MAP covariance update is the ordinary constrained
M-step applied to a regularised scatter ``R_k`` and an inflated count
``m_k = nk + nu_p + d + 2``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DataMatrix, MixtureParameters, ParsimixError, SingularCovarianceError
from .covmodels import SufficientStats, mstep_covariance, parse_model_code

DEFAULT_SHRINKAGE = 0.1


@dataclass(frozen=True, eq=False)
class PriorSpec:
    mu_p: np.ndarray
    kappa_p: float
    nu_p: float
    lambda_p: np.ndarray

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu_p, dtype=float))
        lam = np.atleast_2d(np.asarray(self.lambda_p, dtype=float))
        d = mu.size
        if lam.shape != (d, d):
            raise ValueError(f"scale matrix must be {d}x{d}, got {lam.shape}")
        if not self.kappa_p > 0:
            raise ValueError("kappa_p must be positive")
        if not self.nu_p > d - 1:
            raise ValueError(f"nu_p must exceed d - 1 = {d - 1}")
        if not np.allclose(lam, lam.T) or np.linalg.eigvalsh(lam)[0] <= 0:
            raise ValueError("lambda_p must be symmetric positive definite")
        object.__setattr__(self, "mu_p", mu)
        object.__setattr__(self, "lambda_p", lam)
        object.__setattr__(self, "kappa_p", float(self.kappa_p))
        object.__setattr__(self, "nu_p", float(self.nu_p))
        _, logdet_scale = np.linalg.slogdet(lam)
        nu = self.nu_p
        const = 0.5 * nu * logdet_scale - 0.5 * nu * d * math.log(2.0) - _log_multigamma(nu / 2.0, d)
        object.__setattr__(self, "iw_log_const", const)
        object.__setattr__(self, "cholesky_scale", np.linalg.cholesky(lam))

    @property
    def d(self) -> int:
        return self.mu_p.size

    def to_dict(self) -> dict:
        return {
            "mu_p": self.mu_p.tolist(),
            "kappa_p": self.kappa_p,
            "nu_p": self.nu_p,
            "lambda_p": self.lambda_p.tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "PriorSpec":
        return cls(np.array(data["mu_p"]), data["kappa_p"], data["nu_p"], np.array(data["lambda_p"]))


def default_prior(x, K: int, kappa=None, dof=None, scale_mult: float = 1.0) -> PriorSpec:
    """Data-dependent default hyperparameters.

    Prior mean is the sample mean, shrinkage 0.1, ``d + 2`` degrees of
    freedom and scale ``S / K**(2/d)`` with ``S`` the sample covariance
    (denominator n). ``kappa``, ``dof`` and ``scale_mult`` override the
    defaults.
    """
    values = x.values if isinstance(x, DataMatrix) else np.asarray(x, dtype=float)
    if values.ndim == 1:
        values = values[:, None]
    n, d = values.shape
    if n <= d:
        raise ParsimixError(f"default prior needs more observations than variables (n={n}, d={d})")
    S = np.cov(values, rowvar=False, bias=True).reshape(d, d)
    if np.linalg.matrix_rank(S) < d:
        raise ParsimixError(
            "sample covariance is rank deficient; remove constant or collinear columns before using a prior"
        )
    return PriorSpec(
        mu_p=values.mean(axis=0),
        kappa_p=DEFAULT_SHRINKAGE if kappa is None else kappa,
        nu_p=d + 2 if dof is None else dof,
        lambda_p=scale_mult * S / K ** (2.0 / d),
    )


@dataclass(frozen=True)
class PriorConfig:
    """Recipe for the data-dependent default prior; resolved once per K."""

    kappa: Optional[float] = None
    dof: Optional[float] = None
    scale_mult: float = 1.0

    def resolve(self, x, K: int) -> PriorSpec:
        return default_prior(x, K, self.kappa, self.dof, self.scale_mult)

    def to_dict(self) -> dict:
        return {"kind": "default", "kappa": self.kappa, "dof": self.dof, "scale_mult": self.scale_mult}


def resolve_prior(prior, x, K: int) -> Optional[PriorSpec]:
    """Turn ``None``, a :class:`PriorSpec` or a :class:`PriorConfig` into the prior for one K."""
    if prior is None or isinstance(prior, PriorSpec):
        return prior
    if isinstance(prior, PriorConfig):
        return prior.resolve(x, K)
    raise TypeError(f"unsupported prior {prior!r}")


def map_means(stats: SufficientStats, prior: PriorSpec) -> np.ndarray:
    """Posterior-mode means, shape (d, K): shrink each weighted mean towards ``mu_p``."""
    nk = stats.nk
    xbar = np.where(nk > 0, stats.xbar, 0.0)
    mean = (xbar * nk + prior.kappa_p * prior.mu_p[:, None]) / (nk + prior.kappa_p)
    # an empty component sits exactly at the prior mean
    return np.where(nk > 0, mean, prior.mu_p[:, None])


def regularized_stats(stats: SufficientStats, prior: PriorSpec) -> SufficientStats:
    """Scatter and count that turn the MAP covariance update into a plain M-step."""
    d = stats.d
    nk = stats.nk
    kappa = prior.kappa_p
    diff = np.where(nk > 0, stats.xbar - prior.mu_p[:, None], 0.0).T
    shrink = kappa * nk / (nk + kappa)
    R = prior.lambda_p + stats.W + shrink[:, None, None] * (diff[:, :, None] * diff[:, None, :])
    m = nk + prior.nu_p + d + 2
    return SufficientStats(m, map_means(stats, prior), R)


def map_mstep(stats: SufficientStats, prior: PriorSpec, code: str, n=None):
    """MAP updates of weights, means and covariances.

    Returns ``(pro, mean, cov)`` with shapes (K,), (d, K), (K, d, d).
    Weights are ``nk / n`` since the simplex prior is flat.
    """
    parse_model_code(code)
    n = float(stats.nk.sum()) if n is None else float(n)
    reg = regularized_stats(stats, prior)
    cov = mstep_covariance(code, reg)
    return stats.nk / n, reg.xbar, cov


def _log_multigamma(a: float, d: int) -> float:
    return d * (d - 1) / 4.0 * math.log(math.pi) + sum(math.lgamma(a - j / 2.0) for j in range(d))


def log_prior(params: MixtureParameters, prior: PriorSpec) -> float:
    """Log prior density of the component means and covariances, constants included."""
    if prior.d != params.d:
        raise ValueError("prior and parameters differ in dimension")
    return log_prior_arrays(params.mean, params.cov, prior)


def log_prior_arrays(mean: np.ndarray, cov: np.ndarray, prior: PriorSpec, chol=None, linv=None) -> float:
    """Array form of :func:`log_prior`.

    ``chol`` and ``linv`` may carry precomputed Cholesky factors of ``cov``
    and their inverses.
    """
    d = mean.shape[0]
    nu, kappa = prior.nu_p, prior.kappa_p
    if chol is None:
        try:
            chol = np.linalg.cholesky(cov)
        except np.linalg.LinAlgError as exc:
            raise SingularCovarianceError("covariance is singular") from exc
    logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
    if linv is None:
        linv = np.linalg.inv(chol)
    diff = (mean - prior.mu_p[:, None]).T
    sol = np.matmul(linv, diff[:, :, None])[:, :, 0]
    maha = (sol**2).sum(axis=1)
    # tr(Sigma^-1 scale) = ||L^-1 C||_F^2 with scale = C C^T
    trace = (np.matmul(linv, prior.cholesky_scale) ** 2).sum(axis=(1, 2))
    # N(mu_p, Sigma / kappa) plus inverse Wishart(nu, scale)
    gauss = -0.5 * d * math.log(2 * math.pi) - 0.5 * (logdet - d * math.log(kappa)) - 0.5 * kappa * maha
    iw = prior.iw_log_const - 0.5 * (nu + d + 1) * logdet - 0.5 * trace
    return float((gauss + iw).sum())
