"""Bootstrap inference for fitted mixtures.

Three resampling schemes are supported: ``bs`` resamples rows with
replacement, ``pb`` simulates from the fitted mixture, and ``wlbs`` keeps
the data but draws uniform Dirichlet observation weights. Every replicate
refits the reference model by a single EM chain started at the reference
estimates and is then relabelled to match it.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np

from .core import BootstrapFailure, FitResult, MixtureParameters, ParsimixError, align_labels
from .em import EmControl, _seed_rng, _values, fit
from .parallel import pmap

log = logging.getLogger(__name__)

TYPES = ("bs", "pb", "wlbs")
TYPE_LABELS = {"bs": "nonparametric bootstrap", "pb": "parametric bootstrap", "wlbs": "weighted likelihood bootstrap"}
MAX_FAILED_SHARE = 0.20


def _check_type(kind: str) -> str:
    if kind not in TYPES:
        raise ValueError(f"bootstrap type must be one of {TYPES}, got {kind!r}")
    return kind


def simulate(params: MixtureParameters, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``n`` rows from a Gaussian mixture: component by weight, then the Gaussian."""
    labels = rng.choice(params.K, size=n, p=params.pro)
    chol = np.linalg.cholesky(params.cov)
    noise = rng.standard_normal((n, params.d))
    return params.mean.T[labels] + np.einsum("nij,nj->ni", chol[labels], noise)


def resample(x, result: FitResult, kind: str, rng: np.random.Generator) -> np.ndarray:
    """One bootstrap draw: an (n, d) dataset for ``bs``/``pb``, an (n,) weight vector for ``wlbs``."""
    _check_type(kind)
    X = _values(x)
    n = X.shape[0]
    if kind == "bs":
        return X[rng.integers(n, size=n)]
    if kind == "pb":
        return simulate(result.params, n, rng)
    w = rng.dirichlet(np.ones(n)) * n
    # guard against underflow to zero; weights must stay positive
    return np.maximum(w, np.finfo(float).tiny)


@dataclass
class BootstrapRun:
    type: str
    nboot: int
    replicates: List[MixtureParameters]
    n_failed: int
    seed: int
    reference: MixtureParameters
    column_names: Sequence[str] = ()

    def __post_init__(self):
        _check_type(self.type)

    def stacked(self):
        """Replicate arrays: pro (B, K), mean (B, d, K), variances (B, K, d)."""
        pro = np.array([p.pro for p in self.replicates])
        mean = np.array([p.mean for p in self.replicates])
        var = np.array([np.diagonal(p.cov, axis1=1, axis2=2) for p in self.replicates])
        return pro, mean, var

    def to_dict(self) -> dict:
        return {
            "type": self.type,
            "nboot": self.nboot,
            "n_failed": self.n_failed,
            "seed": self.seed,
            "column_names": list(self.column_names),
            "reference": self.reference.to_dict(),
            "replicates": [p.to_dict() for p in self.replicates],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "BootstrapRun":
        return cls(
            data["type"],
            data["nboot"],
            [MixtureParameters.from_dict(p) for p in data["replicates"]],
            data["n_failed"],
            data["seed"],
            MixtureParameters.from_dict(data["reference"]),
            tuple(data.get("column_names", ())),
        )

    def long_rows(self):
        """``(parameter, component, variable, replicate, value)`` rows for histograms."""
        names = _names(self.column_names, self.reference.d)
        pro, mean, var = self.stacked()
        for b in range(pro.shape[0]):
            for k in range(pro.shape[1]):
                yield ("pro", k + 1, "", b + 1, float(pro[b, k]))
                for j, name in enumerate(names):
                    yield ("mean", k + 1, name, b + 1, float(mean[b, j, k]))
                for j, name in enumerate(names):
                    yield ("variance", k + 1, name, b + 1, float(var[b, k, j]))


def _names(column_names, d):
    return list(column_names) if len(column_names) == d else [f"V{j + 1}" for j in range(d)]


def _replicate(job):
    X, reference, kind, seed, b, control = job
    rng = _seed_rng(seed, b)
    draw = resample(X, reference, kind, rng)
    try:
        if kind == "wlbs":
            rep = fit(X, reference.model, reference.prior_used, control, init_params=reference.params, weights=draw)
        else:
            rep = fit(draw, reference.model, reference.prior_used, control, init_params=reference.params)
    except (ParsimixError, ArithmeticError, ValueError) as exc:
        return None, str(exc)
    return align_labels(reference.params, rep).params, None


def bootstrap_fit(
    x,
    result: FitResult,
    kind: str = "bs",
    nboot: int = 999,
    seed: int = 0,
    control: Optional[EmControl] = None,
    workers: Optional[int] = None,
) -> BootstrapRun:
    """Refit ``result``'s model on ``nboot`` resamples.

    Replicate ``b`` draws from its own stream, spawned from ``seed`` with key
    ``b``, so serial and parallel runs agree exactly. Failed replicates are
    counted and dropped; more than 20% failures raises
    :class:`BootstrapFailure`.
    """
    _check_type(kind)
    if nboot < 1:
        raise ValueError("nboot must be at least 1")
    if not result.converged:
        raise BootstrapFailure(f"reference fit {result.model} did not converge")
    X = _values(x)
    control = control or EmControl(seed=seed)
    jobs = [(X, result, kind, int(seed), b, control) for b in range(nboot)]
    outcomes = pmap(_replicate, jobs, workers, chunksize=max(1, nboot // 64))
    replicates = [p for p, _ in outcomes if p is not None]
    errors = [e for _, e in outcomes if e is not None]
    n_failed = len(errors)
    if n_failed > MAX_FAILED_SHARE * nboot:
        raise BootstrapFailure(
            f"{n_failed} of {nboot} bootstrap replicates failed (first: {errors[0]}); the reference fit is too fragile"
        )
    if n_failed:
        log.warning("%d of %d bootstrap replicates failed and were dropped", n_failed, nboot)
    names = getattr(x, "column_names", ())
    run = BootstrapRun(kind, nboot, replicates, n_failed, int(seed), result.params, tuple(names))
    _log_coverage(run)
    return run


@dataclass(frozen=True)
class IntervalRow:
    parameter: str
    component: int
    variable: str
    estimate: float
    lower: float
    upper: float

    def to_dict(self) -> dict:
        return {
            "parameter": self.parameter,
            "component": self.component,
            "variable": self.variable,
            "estimate": self.estimate,
            "lower": self.lower,
            "upper": self.upper,
        }


def percentile_ci(run: BootstrapRun, level: float = 0.95) -> List[IntervalRow]:
    """Percentile intervals for weights, means and variances.

    Quantiles interpolate linearly between order statistics (the default
    sample-quantile definition in numpy and R).
    """
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    if len(run.replicates) < 2:
        raise ValueError("percentile intervals need at least two successful replicates")
    alpha = (1.0 - level) / 2.0
    probs = [alpha, 1.0 - alpha]
    pro, mean, var = run.stacked()
    ref = run.reference
    names = _names(run.column_names, ref.d)
    q_pro = np.quantile(pro, probs, axis=0)
    q_mean = np.quantile(mean, probs, axis=0)
    q_var = np.quantile(var, probs, axis=0)
    ref_var = np.diagonal(ref.cov, axis1=1, axis2=2)
    rows = []
    for k in range(ref.K):
        rows.append(IntervalRow("pro", k + 1, "", float(ref.pro[k]), float(q_pro[0, k]), float(q_pro[1, k])))
    for k in range(ref.K):
        for j, name in enumerate(names):
            rows.append(
                IntervalRow("mean", k + 1, name, float(ref.mean[j, k]), float(q_mean[0, j, k]), float(q_mean[1, j, k]))
            )
    for k in range(ref.K):
        for j, name in enumerate(names):
            rows.append(
                IntervalRow("variance", k + 1, name, float(ref_var[k, j]), float(q_var[0, k, j]), float(q_var[1, k, j]))
            )
    return rows


def _log_coverage(run: BootstrapRun) -> None:
    if len(run.replicates) < 2:
        return
    rows = percentile_ci(run)
    inside = sum(r.lower <= r.estimate <= r.upper for r in rows)
    share = inside / len(rows)
    level = logging.INFO if share >= 0.95 else logging.WARNING
    log.log(level, "reference estimate inside its own 95%% interval for %.1f%% of parameters", 100 * share)
