"""Command-line interface: ``parsimix <summary|select|fit|bootstrap|diagnose>``.

Exit status is 0 on success, 1 for usage and input errors and 2 for
numerical failures. Errors go to stderr as ``parsimix: error[CODE]: ...``.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

from . import __version__
from .artifacts import (
    envelope,
    fit_from_dict,
    fit_to_dict,
    parameter_rows,
    read_json,
    write_csv,
    write_json,
)
from .bootstrap import TYPE_LABELS, TYPES, bootstrap_fit, percentile_ci
from .core import (
    ALL_CODES,
    FITTED_CODES,
    BootstrapFailure,
    EMFailure,
    IngestError,
    ModelCodeError,
    ModelSpec,
    ParsimixError,
    SingularCovarianceError,
)
from .diagnostics import diagnose
from .em import EmControl, fit
from .ingest import ingest, parse_renames, summarize
from .priors import PriorConfig
from .selection import grid_search, small_class_warning

log = logging.getLogger("parsimix")

K_MAX = 50
EXIT_OK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _k_range(text: str) -> List[int]:
    lo, sep, hi = text.partition("..")
    try:
        a = int(lo)
        b = int(hi) if sep else a
    except ValueError:
        raise UsageError(f"--k-range must look like A..B, got {text!r}") from None
    if a > b or a < 1 or b > K_MAX:
        raise UsageError(f"--k-range must be nonempty and within 1..{K_MAX}, got {text!r}")
    return list(range(a, b + 1))


def _models(text: Optional[str]) -> List[str]:
    if not text:
        return list(FITTED_CODES)
    if text.strip().lower() == "all":
        return list(ALL_CODES)
    codes = [c.strip().upper() for c in text.split(",") if c.strip()]
    for c in codes:
        ModelSpec(c, 1)
    if len(set(codes)) != len(codes):
        raise UsageError("--models lists a code twice")
    return codes


def _prior(args) -> Optional[PriorConfig]:
    if args.prior == "none":
        if any(v is not None for v in (args.prior_kappa, args.prior_dof, args.prior_scale_mult)):
            raise UsageError("prior overrides need --prior default")
        return None
    mult = 1.0 if args.prior_scale_mult is None else args.prior_scale_mult
    if mult <= 0:
        raise UsageError("--prior-scale-mult must be positive")
    return PriorConfig(args.prior_kappa, args.prior_dof, mult)


def _data_args(p):
    p.add_argument("--input", help="path or URL of a delimited text file")
    p.add_argument("--sep", default=",", help="field separator (default ',')")
    p.add_argument("--columns", help="comma-separated columns to analyse, in order")
    p.add_argument("--rename", action="append", metavar="OLD=NEW", help="rename a column (repeatable)")
    p.add_argument("--decimal", default="auto", choices=[".", ",", "auto"])


def _model_args(p):
    p.add_argument("--prior", choices=["default", "none"], default="default")
    p.add_argument("--prior-kappa", type=float)
    p.add_argument("--prior-dof", type=float)
    p.add_argument("--prior-scale-mult", type=float)
    p.add_argument("--seed", type=int, default=0)


def _out_args(p):
    p.add_argument("--out", default=".", help="output directory (default: current directory)")
    p.add_argument("--format", choices=["json", "csv", "both"], default="both")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="parsimix", description="Parsimonious Gaussian mixture modelling.")
    parser.add_argument("--version", action="version", version=f"parsimix {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("summary", help="per-column descriptive statistics")
    _data_args(p)
    _out_args(p)

    p = sub.add_parser("select", help="BIC grid search over models and K")
    _data_args(p)
    _model_args(p)
    p.add_argument("--models", help="comma-separated model codes, or 'all' (default: the fitted set)")
    p.add_argument("--k-range", default="1..9")
    p.add_argument("--include-nonconverged", action="store_true")
    _out_args(p)

    p = sub.add_parser("fit", help="fit one model")
    _data_args(p)
    _model_args(p)
    p.add_argument("--model", required=True)
    p.add_argument("--k", type=int, required=True)
    _out_args(p)

    p = sub.add_parser("bootstrap", help="bootstrap a persisted fit")
    _data_args(p)
    p.add_argument("--fit", help="fit artifact (default: OUT/fit.json)")
    p.add_argument("--type", choices=TYPES, default="bs")
    p.add_argument("--nboot", type=int, default=999)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--seed", type=int, default=0)
    _out_args(p)

    p = sub.add_parser("diagnose", help="entropy and average posterior probabilities of a persisted fit")
    p.add_argument("--fit", help="fit artifact (default: OUT/fit.json)")
    _out_args(p)
    return parser


def _data_config(args) -> dict:
    return {
        "input": args.input,
        "sep": args.sep,
        "columns": None if not args.columns else [c.strip() for c in args.columns.split(",")],
        "rename": parse_renames(args.rename),
        "decimal": args.decimal,
    }


def _load(config: dict):
    if not config.get("input"):
        raise UsageError("--input is required")
    data = ingest(config["input"], config["sep"], config["columns"], config["rename"], config.get("decimal", "auto"))
    log.info("read %d rows x %d columns", data.n, data.d)
    return data


def _wants(args, kind: str) -> bool:
    return args.format in (kind, "both")


def _written(paths):
    for p in paths:
        print(f"wrote {p}")


def cmd_summary(args) -> int:
    config = _data_config(args)
    data = _load(config)
    rows = summarize(data)
    print(f"{'name':<16}{'N':>6}{'Nunq':>6}{'Mean':>9}{'SD':>9}{'Min':>8}{'Median':>8}{'Max':>8}")
    for r in rows:
        print(f"{r.name:<16}{r.N:>6}{r.Nunq:>6}{r.Mean:>9.3f}{r.SD:>9.3f}{r.Min:>8.3g}{r.Median:>8.3g}{r.Max:>8.3g}")
    out = Path(args.out)
    paths = []
    if _wants(args, "json"):
        doc = envelope("summary", config, None, {"n": data.n, "d": data.d, "columns": [r.to_dict() for r in rows]})
        paths.append(write_json(out / "summary.json", doc))
    if _wants(args, "csv"):
        header = ["name", "N", "Nunq", "Mean", "SD", "Min", "Median", "Max"]
        paths.append(write_csv(out / "summary.csv", header, ([getattr(r, h) for h in header] for r in rows)))
    _written(paths)
    return EXIT_OK


def cmd_select(args) -> int:
    config = _data_config(args)
    codes = _models(args.models)
    ks = _k_range(args.k_range)
    prior = _prior(args)
    data = _load(config)
    config.update(
        models=codes, k_range=[ks[0], ks[-1]], prior=None if prior is None else prior.to_dict(),
        include_nonconverged=args.include_nonconverged,
    )
    table = grid_search(
        data, codes, ks, prior, EmControl(seed=args.seed), include_nonconverged=args.include_nonconverged
    )
    if table.best is None:
        raise EMFailure("no model in the grid could be fitted")
    print("Best BIC values:")
    for code, K, b, d in table.bic_diffs:
        print(f"  {code},{K:<3} BIC {b:.3f}  diff {d:.3f}")
    out = Path(args.out)
    paths = []
    if _wants(args, "json"):
        payload = table.to_dict()
        payload["bic_curves"] = {c: [[k, b] for k, b in pts] for c, pts in table.bic_curves().items()}
        paths.append(write_json(out / "selection.json", envelope("select", config, args.seed, payload)))
    if _wants(args, "csv"):
        header = ["code", "K", "bic", "icl", "loglik", "df", "converged", "available", "note"]
        paths.append(write_csv(out / "selection.csv", header, ([e.to_dict()[h] for h in header] for e in table.entries)))
        curves = ((c, k, b) for c, pts in table.bic_curves().items() for k, b in pts)
        paths.append(write_csv(out / "bic_curves.csv", ["code", "K", "bic"], curves))
    _written(paths)
    return EXIT_OK


def cmd_fit(args) -> int:
    config = _data_config(args)
    spec = ModelSpec(args.model, args.k)
    if not spec.fitted:
        raise ModelCodeError(f"model {spec.code} is named but not fitted")
    prior_cfg = _prior(args)
    data = _load(config)
    if spec.K > data.n:
        raise UsageError(f"--k {spec.K} exceeds the number of rows ({data.n})")
    prior = None if prior_cfg is None else prior_cfg.resolve(data, spec.K)
    config.update(model=spec.code, k=spec.K, prior=None if prior_cfg is None else prior_cfg.to_dict())
    result = fit(data, spec, prior, EmControl(seed=args.seed))
    for k in small_class_warning(result):
        _warn("W_SMALL_CLASS", f"component {k} holds under 5% of the observations")
    if not result.converged:
        _warn("W_NOT_CONVERGED", "EM stopped at the iteration limit")
    print(f"{spec.code},{spec.K}: loglik {result.loglik:.3f}  n {result.n}  df {result.df}"
          f"  BIC {result.bic:.3f}  ICL {result.icl:.3f}")
    print("clustering table:", " ".join(str(c) for c in result.cluster_sizes()))
    out = Path(args.out)
    paths = []
    names = data.column_names
    if _wants(args, "json"):
        paths.append(write_json(out / "fit.json", envelope("fit", config, args.seed, {"fit": fit_to_dict(result, names)})))
    if _wants(args, "csv"):
        header = ["parameter", "component", "variable", "variable2", "value"]
        paths.append(write_csv(out / "fit.csv", header, parameter_rows(result.params, names)))
        K = spec.K
        rows = (
            [i + 1, int(result.classification[i])] + result.z[i].tolist() for i in range(result.n)
        )
        paths.append(
            write_csv(out / "fit_posteriors.csv", ["row", "class"] + [f"z{k + 1}" for k in range(K)], rows)
        )
        paths.append(write_csv(out / "profile_means.csv", ["profile", "variable", "mean", "pro"], _profile_rows(result.params, names)))
    _written(paths)
    return EXIT_OK


def _profile_rows(params, names, intervals=None):
    for k in range(params.K):
        for j, name in enumerate(names):
            row = [k + 1, name, float(params.mean[j, k]), float(params.pro[k])]
            if intervals is not None:
                row += list(intervals[(k + 1, name)])
            yield row


def _fit_path(args) -> Path:
    return Path(args.fit) if args.fit else Path(args.out) / "fit.json"


def _load_fit(args):
    path = _fit_path(args)
    if not path.exists():
        raise UsageError(f"fit artifact {path} not found; run 'parsimix fit' first or pass --fit")
    doc = read_json(path)
    if doc.get("command") != "fit" or "fit" not in doc:
        raise UsageError(f"{path} is not a fit artifact")
    return doc, fit_from_dict(doc["fit"]), tuple(doc["fit"].get("column_names", ()))


def cmd_bootstrap(args) -> int:
    if args.nboot < 1:
        raise UsageError("--nboot must be at least 1")
    if not 0 < args.level < 1:
        raise UsageError("--level must lie in (0, 1)")
    doc, reference, names = _load_fit(args)
    config = _data_config(args) if args.input else dict(doc["config"])
    data = _load(config)
    if data.n != reference.n or data.d != reference.params.d:
        raise UsageError(f"data ({data.n} x {data.d}) does not match the fit ({reference.n} x {reference.params.d})")
    if args.nboot < 999:
        _warn("W_FEW_REPLICATES", "percentile intervals are usually based on at least 999 replicates")
    run = bootstrap_fit(data, reference, args.type, args.nboot, args.seed)
    config = dict(config, fit=str(_fit_path(args)), type=args.type, nboot=args.nboot, level=args.level)
    print(f"{TYPE_LABELS[args.type]}: {args.nboot} replicates, {run.n_failed} failed")
    rows = percentile_ci(run, args.level) if len(run.replicates) >= 2 else []
    out = Path(args.out)
    paths = []
    if _wants(args, "json"):
        payload = {"bootstrap": run.to_dict(), "level": args.level, "intervals": [r.to_dict() for r in rows]}
        paths.append(write_json(out / "bootstrap.json", envelope("bootstrap", config, args.seed, payload)))
    if _wants(args, "csv"):
        header = ["parameter", "component", "variable", "estimate", "lower", "upper"]
        paths.append(write_csv(out / "bootstrap.csv", header, ([r.to_dict()[h] for h in header] for r in rows)))
        paths.append(
            write_csv(out / "bootstrap_replicates.csv", ["parameter", "component", "variable", "replicate", "value"], run.long_rows())
        )
        if rows:
            intervals = {(r.component, r.variable): (r.lower, r.upper) for r in rows if r.parameter == "mean"}
            paths.append(
                write_csv(
                    out / "profile_means.csv", ["profile", "variable", "mean", "pro", "lower", "upper"],
                    _profile_rows(reference.params, run.column_names or names, intervals),
                )
            )
    _written(paths)
    return EXIT_OK


def cmd_diagnose(args) -> int:
    doc, result, _ = _load_fit(args)
    report = diagnose(result.z, result.classification)
    print(f"normalised entropy {report.entropy_total:.7f}")
    print("class  count  entropy  avepp")
    for e, a in zip(report.class_entropy_summary, report.avepp):
        print(f"{e.label:>5}  {e.count:>5}  {e.mean:7.3f}  {a.mean:5.3f}")
    for note in report.notes:
        _warn("W_DIAGNOSTIC", note)
    config = {"fit": str(_fit_path(args)), "fit_config": doc.get("config")}
    out = Path(args.out)
    paths = []
    if _wants(args, "json"):
        paths.append(write_json(out / "diagnostics.json", envelope("diagnose", config, doc.get("seed"), {"diagnostics": report.to_dict()})))
    if _wants(args, "csv"):
        header = ["measure", "class", "count", "mean", "sd", "min", "max"]
        rows = [["entropy"] + list(r.to_dict().values()) for r in report.class_entropy_summary]
        rows += [["avepp"] + list(r.to_dict().values()) for r in report.avepp]
        paths.append(write_csv(out / "diagnostics.csv", header, rows))
        cases = (
            [i + 1, int(report.labels[i]), float(report.case_entropy[i]), float(report.map_probability[i])]
            for i in range(report.labels.size)
        )
        paths.append(write_csv(out / "diagnostics_cases.csv", ["row", "class", "entropy", "map_probability"], cases))
        hist = (
            [measure, cls, h["edges"][b], h["edges"][b + 1], h["counts"][b]]
            for measure, by_class in report.histograms().items()
            for cls, h in by_class.items()
            for b in range(len(h["counts"]))
        )
        paths.append(write_csv(out / "diagnostics_hist.csv", ["measure", "class", "left", "right", "count"], hist))
    _written(paths)
    return EXIT_OK


COMMANDS = {
    "summary": cmd_summary,
    "select": cmd_select,
    "fit": cmd_fit,
    "bootstrap": cmd_bootstrap,
    "diagnose": cmd_diagnose,
}


def _warn(code: str, message: str) -> None:
    print(f"parsimix: warning[{code}]: {message}", file=sys.stderr)


def _error(code: str, message: str, status: int) -> int:
    print(f"parsimix: error[{code}]: {message}", file=sys.stderr)
    return status


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        return _error("E_USAGE", str(exc), EXIT_USAGE)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="parsimix: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        return _error("E_USAGE", str(exc), EXIT_USAGE)
    except IngestError as exc:
        return _error("E_INGEST", str(exc), EXIT_USAGE)
    except ModelCodeError as exc:
        return _error("E_MODEL", str(exc), EXIT_USAGE)
    except BootstrapFailure as exc:
        return _error("E_BOOTSTRAP", str(exc), EXIT_NUMERIC)
    except (EMFailure, SingularCovarianceError) as exc:
        return _error("E_NUMERIC", str(exc), EXIT_NUMERIC)
    except ParsimixError as exc:
        return _error("E_INPUT", str(exc), EXIT_USAGE)
    except ValueError as exc:
        return _error("E_INPUT", str(exc), EXIT_USAGE)
    except OSError as exc:
        return _error("E_IO", str(exc), EXIT_USAGE)


if __name__ == "__main__":
    sys.exit(main())
