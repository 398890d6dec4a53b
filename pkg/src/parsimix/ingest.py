"""Reading delimited text into a :class:`DataMatrix`, and per-column summaries."""

from __future__ import annotations

import csv
import io
import urllib.request
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core import DataMatrix, IngestError

MISSING = {"", "na", "nan", "null", "none", "."}
MAX_REPORTED = 5


def _is_url(source: str) -> bool:
    return str(source).lower().startswith(("http://", "https://", "file://"))


def read_text(source) -> str:
    try:
        if _is_url(source):
            with urllib.request.urlopen(str(source), timeout=60) as resp:
                raw = resp.read()
        else:
            raw = Path(source).read_bytes()
    except (OSError, ValueError) as exc:
        raise IngestError(f"cannot read {source}: {exc}") from exc
    for encoding in ("utf-8-sig", "latin-1"):
        try:
            return raw.decode(encoding)
        except UnicodeDecodeError:
            continue
    raise IngestError(f"cannot decode {source}")


def parse_renames(pairs: Optional[Sequence[str]]) -> Dict[str, str]:
    """``["old=new", ...]`` to a mapping."""
    out: Dict[str, str] = {}
    for pair in pairs or ():
        old, sep, new = pair.partition("=")
        if not sep or not old.strip() or not new.strip():
            raise IngestError(f"rename must look like old=new, got {pair!r}")
        out[old.strip()] = new.strip()
    return out


def _to_float(cell: str, decimal_comma: bool) -> float:
    text = cell.strip()
    if text.lower() in MISSING:
        raise ValueError("missing")
    if decimal_comma:
        text = text.replace(",", ".")
    return float(text)


def parse_table(
    text: str,
    sep: str = ",",
    columns: Optional[Sequence[str]] = None,
    renames: Optional[Dict[str, str]] = None,
    decimal: str = "auto",
) -> DataMatrix:
    """Parse delimited text with a header row.

    ``columns`` selects and orders columns (all columns by default);
    ``renames`` maps original to new names and is applied after selection.
    ``decimal`` is ``"."``, ``","`` or ``"auto"``; auto accepts a decimal
    comma when the separator is not a comma.
    """
    if len(sep) != 1:
        raise IngestError(f"separator must be a single character, got {sep!r}")
    if decimal not in (".", ",", "auto"):
        raise IngestError("decimal must be '.', ',' or 'auto'")
    if decimal == "," and sep == ",":
        raise IngestError("decimal comma needs a separator other than ','")
    rows = list(csv.reader(io.StringIO(text), delimiter=sep))
    while rows and not any(c.strip() for c in rows[-1]):
        rows.pop()
    if not rows:
        raise IngestError("input is empty")
    header = [h.strip() for h in rows[0]]
    if len(set(header)) != len(header):
        raise IngestError("duplicate column names in header")
    wanted = list(columns) if columns else header
    missing = [c for c in wanted if c not in header]
    if missing:
        raise IngestError(
            f"columns not found: {missing}; available: {header[:10]}{' ...' if len(header) > 10 else ''}"
            f" (is the separator {sep!r} right?)"
        )
    index = [header.index(c) for c in wanted]
    body = rows[1:]
    if not body:
        raise IngestError("input has a header but no data rows")
    allow_comma = decimal == "," or (decimal == "auto" and sep != ",")
    values = np.empty((len(body), len(index)))
    bad: List[str] = []
    for r, row in enumerate(body):
        line = r + 2
        if len(row) != len(header):
            bad.append(f"line {line}: expected {len(header)} fields, found {len(row)}")
            continue
        for j, col in enumerate(index):
            try:
                values[r, j] = _to_float(row[col], allow_comma)
            except ValueError:
                what = "missing value" if row[col].strip().lower() in MISSING else f"non-numeric value {row[col]!r}"
                bad.append(f"line {line}, column {wanted[j]!r}: {what}")
                break
        if len(bad) >= MAX_REPORTED:
            break
    if bad:
        raise IngestError("rejected rows:\n  " + "\n  ".join(bad))
    renames = renames or {}
    unknown = [old for old in renames if old not in wanted]
    if unknown:
        raise IngestError(f"cannot rename unknown columns {unknown}")
    names = [renames.get(c, c) for c in wanted]
    if len(set(names)) != len(names):
        raise IngestError("column names must be unique after renaming")
    return DataMatrix(values, tuple(names))


def ingest(source, sep: str = ",", columns=None, renames=None, decimal: str = "auto") -> DataMatrix:
    """Read a path or URL and parse it with :func:`parse_table`."""
    return parse_table(read_text(source), sep, columns, renames, decimal)


@dataclass(frozen=True)
class ColumnSummary:
    name: str
    N: int
    Nunq: int
    Mean: float
    SD: float
    Min: float
    Median: float
    Max: float

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def summarize(data: DataMatrix) -> List[ColumnSummary]:
    """Count, distinct values, mean, sample SD, min, median and max per column."""
    out = []
    for j, name in enumerate(data.column_names):
        v = data.values[:, j]
        sd = float(np.std(v, ddof=1)) if v.size > 1 else float("nan")
        out.append(
            ColumnSummary(
                name, int(v.size), int(np.unique(v).size), float(v.mean()), sd,
                float(v.min()), float(np.median(v)), float(v.max()),
            )
        )
    return out
