"""Information criteria and the (model, K) grid search."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .core import ALL_CODES, FITTED_CODES, FitResult, ModelSpec, ParsimixError
from .em import EmControl, _values, bic_value, fit, icl_value, initial_partitions
from .parallel import pmap
from .priors import resolve_prior

log = logging.getLogger(__name__)

SMALL_CLASS_SHARE = 0.05


def bic(loglik: float, df: int, n: int) -> float:
    """``2 loglik - df log n``; larger is better."""
    if n < 1:
        raise ValueError("n must be at least 1")
    return bic_value(loglik, df, n)


def icl(bic_: float, z, labels) -> float:
    """BIC plus twice the log MAP responsibilities (1-based ``labels``)."""
    z = np.asarray(z, dtype=float)
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (z.shape[0],) or labels.min() < 1 or labels.max() > z.shape[1]:
        raise ValueError("labels do not match the responsibility matrix")
    return icl_value(bic_, z, labels)


@dataclass
class SelectionEntry:
    code: str
    K: int
    bic: Optional[float] = None
    icl: Optional[float] = None
    loglik: Optional[float] = None
    df: Optional[int] = None
    converged: Optional[bool] = None
    available: bool = False
    note: str = ""

    def to_dict(self) -> dict:
        return {
            "code": self.code,
            "K": self.K,
            "bic": self.bic,
            "icl": self.icl,
            "loglik": self.loglik,
            "df": self.df,
            "converged": self.converged,
            "available": self.available,
            "note": self.note,
        }


@dataclass
class SelectionTable:
    """Grid results ranked by BIC.

    ``entries`` lists ranked candidates first, then fits excluded from the
    ranking, then unavailable cells. ``bic_diffs`` holds up to three
    ``(code, K, bic, diff)`` rows with the best first at diff 0.
    """

    entries: List[SelectionEntry]
    best: Optional[SelectionEntry]
    bic_diffs: List[Tuple[str, int, float, float]]
    include_nonconverged: bool = False
    fits: Dict[Tuple[str, int], FitResult] = field(default_factory=dict, repr=False)

    def ranked(self) -> List[SelectionEntry]:
        return [e for e in self.entries if _eligible(e, self.include_nonconverged)]

    def bic_curves(self) -> Dict[str, List[Tuple[int, Optional[float]]]]:
        """BIC by K for each code, in K order; unavailable cells give ``None``."""
        curves: Dict[str, List[Tuple[int, Optional[float]]]] = {}
        for e in sorted(self.entries, key=lambda e: (_code_rank(e.code), e.K)):
            curves.setdefault(e.code, []).append((e.K, e.bic if e.available else None))
        return curves

    def to_dict(self) -> dict:
        return {
            "best": None if self.best is None else {"code": self.best.code, "K": self.best.K, "bic": self.best.bic},
            "bic_diffs": [{"code": c, "K": k, "bic": b, "diff": d} for c, k, b, d in self.bic_diffs],
            "include_nonconverged": self.include_nonconverged,
            "entries": [e.to_dict() for e in self.entries],
        }


def _code_rank(code: str) -> int:
    return ALL_CODES.index(code)


def _eligible(entry: SelectionEntry, include_nonconverged: bool) -> bool:
    return entry.available and (entry.converged or include_nonconverged)


def _fit_cell(job):
    X, code, K, prior, control, partitions = job
    try:
        return fit(X, ModelSpec(code, K), prior=prior, control=control, partitions=partitions), None
    except (ParsimixError, ArithmeticError, ValueError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def grid_search(
    x,
    codes: Sequence[str] = FITTED_CODES,
    K_range: Sequence[int] = range(1, 10),
    prior=None,
    control: EmControl = EmControl(),
    include_nonconverged: bool = False,
    workers: Optional[int] = None,
) -> SelectionTable:
    """Fit every (code, K) cell and rank by BIC.

    ``prior`` is ``None``, a fixed :class:`~parsimix.priors.PriorSpec` or a
    :class:`~parsimix.priors.PriorConfig` resolved per K. Every code at a
    given K starts from the same initial partitions. Named-only codes and
    failed cells are kept as unavailable entries.
    """
    X = _values(x)
    n = X.shape[0]
    codes = [ModelSpec(c, 1).code for c in codes]
    if len(set(codes)) != len(codes):
        raise ValueError("model codes must not repeat")
    Ks = sorted(set(int(k) for k in K_range))
    if not Ks or Ks[0] < 1 or Ks[-1] > n:
        raise ValueError(f"K range must be nonempty and within [1, {n}]")

    fitted = [c for c in codes if c in FITTED_CODES]
    jobs, cells = [], []
    for K in Ks:
        try:
            prior_k = resolve_prior(prior, X, K)
        except ParsimixError as exc:
            for c in fitted:
                cells.append((c, K, f"prior: {exc}"))
            continue
        partitions = [labels for _, labels in initial_partitions(X, K, control)] if fitted else []
        for c in fitted:
            jobs.append((X, c, K, prior_k, control, partitions))
            cells.append((c, K, None))

    results = iter(pmap(_fit_cell, jobs, workers))
    entries, fits = [], {}
    for code, K, early_note in cells:
        if early_note is not None:
            entries.append(SelectionEntry(code, K, note=early_note))
            continue
        result, note = next(results)
        if result is None:
            log.info("%s,%d unavailable: %s", code, K, note)
            entries.append(SelectionEntry(code, K, note=note))
            continue
        fits[(code, K)] = result
        entries.append(
            SelectionEntry(
                code, K, result.bic, result.icl, result.loglik, result.df, result.converged, True,
                "" if result.converged else "did not converge",
            )
        )
    for code in codes:
        if code not in FITTED_CODES:
            for K in Ks:
                entries.append(SelectionEntry(code, K, note="named only; no closed-form M-step"))

    def order(e):
        eligible = _eligible(e, include_nonconverged)
        group = 0 if eligible else (1 if e.available else 2)
        score = -e.bic if e.available else 0.0
        return (group, score, _code_rank(e.code), e.K)

    entries.sort(key=order)
    ranked = [e for e in entries if _eligible(e, include_nonconverged)]
    best = ranked[0] if ranked else None
    diffs = [(e.code, e.K, e.bic, e.bic - best.bic) for e in ranked[:3]]
    return SelectionTable(entries, best, diffs, include_nonconverged, fits)


def small_class_warning(result: FitResult, threshold: float = SMALL_CLASS_SHARE) -> List[int]:
    """1-based components whose share of the MAP partition is below ``threshold``."""
    sizes = result.cluster_sizes()
    shares = sizes / max(1, sizes.sum())
    return [int(k) + 1 for k in np.flatnonzero(shares < threshold)]
