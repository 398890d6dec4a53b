"""Classification-quality diagnostics for fitted mixtures."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .core import check_responsibilities, map_classify

log = logging.getLogger(__name__)

AVEPP_CUTOFF = 0.8
ENTROPY_NOTE_BELOW = 0.6
HIST_BINS = 21
HIST_RANGE = (0.0, 1.05)
K1_NOTE = "single component: entropy set to 1 by convention"


def _xlogx_rows(z: np.ndarray) -> np.ndarray:
    """Row sums of ``z log z`` with ``0 log 0 = 0``."""
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(z > 0, z * np.log(np.where(z > 0, z, 1.0)), 0.0)
    return terms.sum(axis=1)


def entropy_total(z) -> float:
    """Normalised entropy ``1 + sum z log z / (n log K)``; 1 means crisp assignments."""
    z = check_responsibilities(z)
    n, K = z.shape
    if K == 1:
        log.info(K1_NOTE)
        return 1.0
    return float(1.0 + _xlogx_rows(z).sum() / (n * math.log(K)))


@dataclass(frozen=True)
class ClassSummary:
    label: int
    count: int
    mean: float
    sd: float
    min: float
    max: float

    def to_dict(self) -> dict:
        return {"class": self.label, "count": self.count, "mean": self.mean, "sd": self.sd, "min": self.min, "max": self.max}


def _summaries(values: np.ndarray, labels: np.ndarray, K: int) -> List[ClassSummary]:
    out = []
    for k in range(1, K + 1):
        v = values[labels == k]
        if v.size == 0:
            log.warning("class %d has no members and is omitted", k)
            continue
        sd = float(np.std(v, ddof=1)) if v.size > 1 else float("nan")
        out.append(ClassSummary(k, int(v.size), float(v.mean()), sd, float(v.min()), float(v.max())))
    return out


def _labels(z, labels):
    if labels is None:
        return map_classify(z)
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (z.shape[0],) or labels.min() < 1 or labels.max() > z.shape[1]:
        raise ValueError("labels must be 1..K, one per row of z")
    return labels


def entropy_contributions(z, labels=None):
    """Per-case entropies ``E_i = 1 + sum_k z_ik log z_ik / log K`` and their per-class summary.

    Cases are grouped by ``labels`` (1-based, MAP labels by default); the
    class summary has count, mean, sample sd, min and max.
    """
    z = check_responsibilities(z)
    n, K = z.shape
    labels = _labels(z, labels)
    if K == 1:
        log.info(K1_NOTE)
        case = np.ones(n)
    else:
        case = 1.0 + _xlogx_rows(z) / math.log(K)
    return case, _summaries(case, labels, K)


def avepp(z, labels=None) -> List[ClassSummary]:
    """Average MAP membership probability per class, with spread.

    Classes below the 0.8 cutoff are flagged by :func:`avepp_flags`.
    """
    z = check_responsibilities(z)
    labels = _labels(z, labels)
    top = z[np.arange(z.shape[0]), labels - 1]
    return _summaries(top, labels, z.shape[1])


def avepp_flags(table: List[ClassSummary], cutoff: float = AVEPP_CUTOFF) -> List[int]:
    return [row.label for row in table if row.mean < cutoff]


def histogram(values, bins: int = HIST_BINS, value_range=HIST_RANGE) -> Dict[str, list]:
    counts, edges = np.histogram(np.asarray(values, dtype=float), bins=bins, range=value_range)
    return {"edges": edges.tolist(), "counts": counts.tolist()}


@dataclass
class DiagnosticsReport:
    entropy_total: float
    case_entropy: np.ndarray
    map_probability: np.ndarray
    labels: np.ndarray
    class_entropy_summary: List[ClassSummary]
    avepp: List[ClassSummary]
    avepp_flags: List[int]
    notes: List[str] = field(default_factory=list)

    def histograms(self) -> Dict[str, Dict[int, Dict[str, list]]]:
        """Per-class histograms of case entropy and MAP probability (21 bins on [0, 1.05])."""
        out: Dict[str, Dict[int, Dict[str, list]]] = {"entropy": {}, "map_probability": {}}
        for row in self.class_entropy_summary:
            members = self.labels == row.label
            out["entropy"][row.label] = histogram(self.case_entropy[members])
            out["map_probability"][row.label] = histogram(self.map_probability[members])
        return out

    def to_dict(self, include_cases: bool = True) -> dict:
        data = {
            "entropy_total": self.entropy_total,
            "class_entropy_summary": [r.to_dict() for r in self.class_entropy_summary],
            "avepp": [r.to_dict() for r in self.avepp],
            "avepp_flags": list(self.avepp_flags),
            "notes": list(self.notes),
            "histograms": {
                key: {str(k): h for k, h in by_class.items()} for key, by_class in self.histograms().items()
            },
        }
        if include_cases:
            data["case_entropy"] = self.case_entropy.tolist()
            data["map_probability"] = self.map_probability.tolist()
            data["labels"] = self.labels.tolist()
        return data


def diagnose(z, labels=None, cutoff: float = AVEPP_CUTOFF) -> DiagnosticsReport:
    """Entropy and AvePP diagnostics for one set of responsibilities."""
    z = check_responsibilities(z)
    labels = _labels(z, labels)
    K = z.shape[1]
    total = entropy_total(z)
    case, class_summary = entropy_contributions(z, labels)
    table = avepp(z, labels)
    notes = []
    if K == 1:
        notes.append(K1_NOTE)
    elif total < ENTROPY_NOTE_BELOW:
        notes.append(f"normalised entropy {total:.3f} is below {ENTROPY_NOTE_BELOW}; classification is fuzzy")
    flags = avepp_flags(table, cutoff)
    if flags:
        notes.append(f"classes {flags} have average posterior probability below {cutoff}")
    return DiagnosticsReport(
        total, case, z[np.arange(z.shape[0]), labels - 1], labels, class_summary, table, flags, notes
    )
