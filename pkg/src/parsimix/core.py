"""Shared domain types, exceptions and label-permutation utilities."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

PROB_ATOL = 1e-12
PD_REL_TOL = 1e-10

FITTED_CODES = ("EII", "VII", "EEI", "VEI", "EVI", "VVI", "EEE", "EEV", "VEV", "VVV")
NAMED_ONLY_CODES = ("EVE", "VVE", "VEE", "EVV")
ALL_CODES = FITTED_CODES + NAMED_ONLY_CODES


class ParsimixError(Exception):
    """Base class for every error raised by the package."""


class ModelCodeError(ParsimixError, ValueError):
    pass


class DimensionMismatchError(ParsimixError, ValueError):
    pass


class SingularCovarianceError(ParsimixError, ArithmeticError):
    """A covariance matrix (or the statistics feeding it) is degenerate."""

    def __init__(self, message, component=None):
        super().__init__(message)
        self.component = component


class EMFailure(ParsimixError, RuntimeError):
    pass


class BootstrapFailure(ParsimixError, RuntimeError):
    pass


class IngestError(ParsimixError, ValueError):
    pass


def _frozen_array(a, dtype=float):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """An ``n x d`` table of finite observations with column names."""

    values: np.ndarray
    column_names: tuple

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] < 1 or values.shape[1] < 1:
            raise DimensionMismatchError(f"data must be a non-empty 2-d table, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            bad = np.unique(np.nonzero(~np.isfinite(values))[0])[:5] + 1
            raise IngestError(f"data contains missing or non-finite entries (rows {bad.tolist()} ...)")
        names = tuple(str(c) for c in self.column_names)
        if len(names) != values.shape[1]:
            raise DimensionMismatchError(
                f"{len(names)} column names given for {values.shape[1]} columns"
            )
        object.__setattr__(self, "values", _frozen_array(values))
        object.__setattr__(self, "column_names", names)

    @classmethod
    def from_array(cls, values, column_names: Optional[Sequence[str]] = None) -> "DataMatrix":
        values = np.asarray(values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if column_names is None:
            column_names = [f"V{j + 1}" for j in range(values.shape[1])]
        return cls(values, tuple(column_names))

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def d(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class ModelSpec:
    code: str
    K: int

    def __post_init__(self):
        code = str(self.code).upper()
        if code not in ALL_CODES:
            raise ModelCodeError(f"unknown model code {self.code!r}; valid codes: {', '.join(ALL_CODES)}")
        if int(self.K) != self.K or self.K < 1:
            raise ValueError(f"K must be a positive integer, got {self.K!r}")
        object.__setattr__(self, "code", code)
        object.__setattr__(self, "K", int(self.K))

    @property
    def fitted(self) -> bool:
        return self.code in FITTED_CODES

    def __str__(self):
        return f"{self.code},{self.K}"


def check_covariance_pd(cov: np.ndarray, component=None) -> None:
    """Raise :class:`SingularCovarianceError` unless ``cov`` is numerically PD."""
    d = cov.shape[0]
    tr = np.trace(cov)
    if not np.isfinite(tr) or tr <= 0:
        raise SingularCovarianceError(f"covariance of component {component} has non-positive trace", component)
    smallest = np.linalg.eigvalsh(cov)[0]
    if smallest <= PD_REL_TOL * tr / d:
        raise SingularCovarianceError(
            f"covariance of component {component} is singular (smallest eigenvalue {smallest:.3g})",
            component,
        )


@dataclass(frozen=True, eq=False)
class MixtureParameters:
    """Mixing proportions ``pro`` (K,), means ``mean`` (d, K), covariances ``cov`` (K, d, d)."""

    pro: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    code: Optional[str] = None

    def __post_init__(self):
        pro = np.atleast_1d(np.asarray(self.pro, dtype=float))
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        K = pro.shape[0]
        if mean.ndim == 1:
            mean = mean[:, None] if K == 1 else mean[None, :]
        if cov.ndim == 2:
            cov = cov[None]
        d = mean.shape[0]
        if mean.shape != (d, K) or cov.shape != (K, d, d):
            raise DimensionMismatchError(
                f"inconsistent shapes: pro {pro.shape}, mean {mean.shape}, cov {cov.shape}"
            )
        if np.any(pro <= 0) or abs(pro.sum() - 1.0) > PROB_ATOL * max(K, 1) * 10:
            raise ValueError(f"mixing proportions must be positive and sum to 1, got {pro}")
        if not np.allclose(cov, np.swapaxes(cov, 1, 2), rtol=0, atol=1e-12 * max(1.0, np.abs(cov).max())):
            raise ValueError("covariance matrices must be symmetric")
        for k in range(K):
            check_covariance_pd(cov[k], k + 1)
        object.__setattr__(self, "pro", _frozen_array(pro))
        object.__setattr__(self, "mean", _frozen_array(mean))
        object.__setattr__(self, "cov", _frozen_array(cov))

    @property
    def K(self) -> int:
        return self.pro.shape[0]

    @property
    def d(self) -> int:
        return self.mean.shape[0]

    def permute(self, perm: Sequence[int]) -> "MixtureParameters":
        """Return parameters whose component ``j`` is this object's component ``perm[j]``."""
        perm = np.asarray(perm, dtype=int)
        return MixtureParameters(self.pro[perm], self.mean[:, perm], self.cov[perm], self.code)

    def to_dict(self) -> dict:
        return {
            "pro": self.pro.tolist(),
            "mean": self.mean.tolist(),
            "cov": self.cov.tolist(),
            "code": self.code,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MixtureParameters":
        return cls(np.array(data["pro"]), np.array(data["mean"]), np.array(data["cov"]), data.get("code"))


def check_responsibilities(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim != 2:
        raise DimensionMismatchError(f"responsibilities must be n x K, got shape {z.shape}")
    if np.any(z < 0) or np.any(np.abs(z.sum(axis=1) - 1.0) > 1e-12 * max(1, z.shape[1])):
        raise ValueError("responsibilities must be nonnegative with rows summing to 1")
    return z


def map_classify(z: np.ndarray) -> np.ndarray:
    """MAP labels ``1..K``; ties go to the lowest component index."""
    z = np.asarray(z, dtype=float)
    return np.argmax(z, axis=1) + 1


@dataclass(frozen=True, eq=False)
class FitResult:
    model: ModelSpec
    params: MixtureParameters
    loglik: float
    df: int
    bic: float
    icl: float
    z: np.ndarray
    classification: np.ndarray
    iterations: int
    converged: bool
    prior_used: Optional[object] = None
    objective: Optional[float] = None
    n: int = field(default=0)

    def __post_init__(self):
        object.__setattr__(self, "z", _frozen_array(self.z))
        object.__setattr__(self, "classification", _frozen_array(self.classification, dtype=int))
        if not self.n:
            object.__setattr__(self, "n", int(self.z.shape[0]))

    def permute(self, perm: Sequence[int]) -> "FitResult":
        """Relabel components: new component ``j`` is old component ``perm[j]``."""
        perm = np.asarray(perm, dtype=int)
        inverse = np.empty_like(perm)
        inverse[perm] = np.arange(perm.size)
        labels = inverse[self.classification - 1] + 1
        return replace(self, params=self.params.permute(perm), z=self.z[:, perm], classification=labels)

    def cluster_sizes(self) -> np.ndarray:
        return np.bincount(self.classification - 1, minlength=self.model.K)


def _match_permutation(ref_means: np.ndarray, cand_means: np.ndarray) -> np.ndarray:
    """Permutation ``p`` minimising sum_j ||ref_j - cand_{p[j]}||; means are (K, d)."""
    K = ref_means.shape[0]
    cost = np.linalg.norm(ref_means[:, None, :] - cand_means[None, :, :], axis=2)
    if K <= 8:
        perms = np.array(list(itertools.permutations(range(K))), dtype=int)
        totals = cost[np.arange(K), perms].sum(axis=1)
        # argmin returns the lexicographically first optimum, so the identity wins ties
        return perms[int(np.argmin(totals))]
    perm = np.full(K, -1, dtype=int)
    work = cost.copy()
    for _ in range(K):
        i, j = np.unravel_index(np.argmin(work), work.shape)
        perm[i] = j
        work[i, :] = np.inf
        work[:, j] = np.inf
    return perm


def align_labels(reference: MixtureParameters, candidate: FitResult) -> FitResult:
    """Permute ``candidate``'s components to best match the means of ``reference``.

    Exhaustive search over permutations for K <= 8, greedy nearest-mean
    matching above that.
    """
    cand = candidate.params
    if reference.K != cand.K or reference.d != cand.d:
        raise DimensionMismatchError(
            f"cannot align K={cand.K}, d={cand.d} candidate to K={reference.K}, d={reference.d} reference"
        )
    perm = _match_permutation(reference.mean.T, cand.mean.T)
    if np.array_equal(perm, np.arange(reference.K)):
        return candidate
    return candidate.permute(perm)


def align_parameters(reference: MixtureParameters, candidate: MixtureParameters) -> MixtureParameters:
    if reference.K != candidate.K or reference.d != candidate.d:
        raise DimensionMismatchError("reference and candidate dimensions differ")
    return candidate.permute(_match_permutation(reference.mean.T, candidate.mean.T))
