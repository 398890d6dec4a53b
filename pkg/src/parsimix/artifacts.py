"""Serialisation of results and the JSON/CSV artifact files."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path
from typing import Iterable, Optional, Sequence

import numpy as np

from . import __version__
from .core import FitResult, MixtureParameters, ModelSpec
from .priors import PriorSpec

CSV_DIGITS = 9


def fit_to_dict(result: FitResult, column_names: Sequence[str] = ()) -> dict:
    prior = result.prior_used
    return {
        "model": {"code": result.model.code, "K": result.model.K},
        "column_names": list(column_names),
        "n": result.n,
        "df": result.df,
        "loglik": result.loglik,
        "objective": result.objective,
        "bic": result.bic,
        "icl": result.icl,
        "iterations": result.iterations,
        "converged": result.converged,
        "prior": None if prior is None else prior.to_dict(),
        "params": result.params.to_dict(),
        "cluster_sizes": result.cluster_sizes().tolist(),
        "classification": result.classification.tolist(),
        "z": result.z.tolist(),
    }


def fit_from_dict(data: dict) -> FitResult:
    prior = data.get("prior")
    return FitResult(
        model=ModelSpec(data["model"]["code"], data["model"]["K"]),
        params=MixtureParameters.from_dict(data["params"]),
        loglik=data["loglik"],
        df=data["df"],
        bic=data["bic"],
        icl=data["icl"],
        z=np.array(data["z"], dtype=float),
        classification=np.array(data["classification"], dtype=int),
        iterations=data["iterations"],
        converged=data["converged"],
        prior_used=None if prior is None else PriorSpec.from_dict(prior),
        objective=data.get("objective"),
        n=data["n"],
    )


def envelope(command: str, config: dict, seed: Optional[int], payload: dict) -> dict:
    """Wrap a result with the metadata needed to reproduce it."""
    return {"tool": "parsimix", "version": __version__, "command": command, "seed": seed, "config": config, **payload}


def _clean(obj):
    # JSON has no NaN or infinity
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    return obj


def write_json(path: Path, data: dict) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_clean(data), indent=2, allow_nan=False) + "\n")
    return path


def read_json(path: Path) -> dict:
    return json.loads(Path(path).read_text())


def _fmt(value):
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return "" if math.isnan(value) else f"{float(value):.{CSV_DIGITS}g}"
    return value


def write_csv(path: Path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])
    return path


def parameter_rows(params: MixtureParameters, column_names: Sequence[str]):
    """Long rows ``(parameter, component, variable, variable2, value)`` of a parameter set."""
    names = list(column_names) if len(column_names) == params.d else [f"V{j + 1}" for j in range(params.d)]
    for k in range(params.K):
        yield ("pro", k + 1, "", "", float(params.pro[k]))
        for j, a in enumerate(names):
            yield ("mean", k + 1, a, "", float(params.mean[j, k]))
        for i, a in enumerate(names):
            for j, b in enumerate(names):
                yield ("cov", k + 1, a, b, float(params.cov[k, i, j]))
