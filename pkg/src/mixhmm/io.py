"""Delimited-text input and output.

Record files have one row per subject-month with the header
``subject_id,month,miles,cnc,kinematic_count``.  The per-type kinematic
columns (``rapid_starts,hard_stops,hard_left,hard_right,yaw``) may replace
or accompany ``kinematic_count``; when present they are summed into it.

Every file written here starts with a ``#`` comment line carrying the tool
version, the seed and a hash of the resolved configuration, so identical
invocations produce byte-identical files.
"""
from __future__ import annotations

import csv
import hashlib
import io as _io
import json
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .model import Dataset, ModelParams, PARAM_NAMES, SubjectSeries, ValidationError

__all__ = [
    "IngestReport",
    "ingest",
    "write_dataset",
    "read_config",
    "config_hash",
    "header_line",
    "write_table",
    "read_table",
    "fit_to_json",
    "params_from_fit_file",
    "KINEMATIC_TYPES",
]

VERSION = "0.1.0"
REQUIRED = ("subject_id", "month", "miles", "cnc")
KINEMATIC_TYPES = ("rapid_starts", "hard_stops", "hard_left", "hard_right", "yaw")


@dataclass
class IngestReport:
    rows: int = 0
    subjects: int = 0
    clamped_cnc: int = 0
    clamped_lines: list[int] = field(default_factory=list)


def _int_field(text: str, name: str, line: int, minimum: int) -> int:
    try:
        v = float(text)
    except ValueError:
        raise ValidationError(f"line {line}: {name} is not a number: {text!r}") from None
    if not math.isfinite(v) or v != int(v):
        raise ValidationError(f"line {line}: {name} must be an integer, got {text!r}")
    if v < minimum:
        raise ValidationError(f"line {line}: {name} must be >= {minimum}, got {text!r}")
    return int(v)


def _data_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        if raw.strip() and not raw.lstrip().startswith("#"):
            yield lineno, raw


def ingest(path, return_report: bool = False):
    """Read and validate a record file.

    Returns the :class:`Dataset`, or ``(Dataset, IngestReport)`` when
    ``return_report`` is set.  CNC counts above one are clamped to one and
    counted in the report.
    """
    text = Path(path).read_text()
    lines = list(_data_lines(text))
    if not lines:
        raise ValidationError(f"{path}: no header row")
    header_line, header = lines[0][0], next(csv.reader([lines[0][1]]))
    header = [h.strip() for h in header]
    missing = [c for c in REQUIRED if c not in header]
    has_types = all(c in header for c in KINEMATIC_TYPES)
    if "kinematic_count" not in header and not has_types:
        missing.append("kinematic_count")
    if missing:
        raise ValidationError(f"line {header_line}: missing columns {','.join(missing)}")
    if len(set(header)) != len(header):
        raise ValidationError(f"line {header_line}: duplicate column names")
    col = {h: i for i, h in enumerate(header)}

    report = IngestReport()
    records: dict[str, dict[int, tuple]] = defaultdict(dict)
    order: list[str] = []
    for lineno, cells in ((n, next(csv.reader([r]))) for n, r in lines[1:]):
        if len(cells) != len(header):
            raise ValidationError(f"line {lineno}: expected {len(header)} fields, got {len(cells)}")
        cells = [c.strip() for c in cells]
        sid = cells[col["subject_id"]]
        if not sid:
            raise ValidationError(f"line {lineno}: empty subject_id")
        month = _int_field(cells[col["month"]], "month", lineno, 1)
        try:
            miles = float(cells[col["miles"]])
        except ValueError:
            raise ValidationError(f"line {lineno}: miles is not a number") from None
        if not (math.isfinite(miles) and miles > 0):
            raise ValidationError(f"line {lineno}: miles must be positive and finite")
        cnc = _int_field(cells[col["cnc"]], "cnc", lineno, 0)
        if cnc > 1:
            report.clamped_cnc += 1
            report.clamped_lines.append(lineno)
            cnc = 1
        if has_types:
            count = sum(_int_field(cells[col[c]], c, lineno, 0) for c in KINEMATIC_TYPES)
            if "kinematic_count" in col:
                given = _int_field(cells[col["kinematic_count"]], "kinematic_count", lineno, 0)
                if given != count:
                    raise ValidationError(
                        f"line {lineno}: kinematic_count {given} differs from the per-type sum {count}"
                    )
        else:
            count = _int_field(cells[col["kinematic_count"]], "kinematic_count", lineno, 0)
        if sid not in records:
            order.append(sid)
        if month in records[sid]:
            raise ValidationError(f"line {lineno}: duplicate record for subject {sid} month {month}")
        records[sid][month] = (miles, cnc, count)
        report.rows += 1

    subjects = []
    for sid in order:
        months = sorted(records[sid])
        if months[-1] - months[0] + 1 != len(months):
            raise ValidationError(f"subject {sid}: months are not contiguous")
        if len(months) < 2:
            raise ValidationError(f"subject {sid}: at least two months are required")
        rows = [records[sid][m] for m in months]
        subjects.append(
            SubjectSeries(
                sid,
                np.array(months),
                np.array([r[0] for r in rows]),
                np.array([r[1] for r in rows]),
                np.array([r[2] for r in rows]),
            )
        )
    report.subjects = len(subjects)
    d = Dataset(tuple(subjects))
    return (d, report) if return_report else d


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def header_line(seed, config: Mapping[str, object]) -> str:
    return f"# mixhmm {VERSION} seed={seed} config={config_hash(config)}"


def write_table(path, columns: Sequence[str], rows: Iterable[Sequence], header: str | None = None):
    """Write a comma-delimited table, optionally preceded by a header comment."""
    buf = _io.StringIO()
    if header:
        buf.write(header + "\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    Path(path).write_text(buf.getvalue())


def read_table(path) -> tuple[list[str], list[list[str]]]:
    lines = [r for _, r in _data_lines(Path(path).read_text())]
    if not lines:
        raise ValidationError(f"{path}: empty table")
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


def write_dataset(path, d: Dataset, header: str | None = None):
    rows = []
    for s in d:
        for j in range(len(s)):
            rows.append((s.subject_id, int(s.t[j]), float(s.miles[j]), int(s.y[j]), int(s.x[j])))
    write_table(path, ("subject_id", "month", "miles", "cnc", "kinematic_count"), rows, header)


_KEY = re.compile(r"^[A-Za-z_][A-Za-z0-9_.]*$")


def read_config(path) -> dict[str, str]:
    """Flat ``key=value`` file; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"{path} line {lineno}: expected key=value")
        k, v = (part.strip() for part in line.split("=", 1))
        if not _KEY.match(k):
            raise ValidationError(f"{path} line {lineno}: bad key {k!r}")
        out[k] = v
    return out


def config_hash(config: Mapping[str, object]) -> str:
    text = "\n".join(f"{k}={_fmt(config[k])}" for k in sorted(config))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def fit_to_json(res, meta: Mapping[str, object]) -> str:
    full = res.params.to_dict()
    doc = {
        "meta": dict(meta),
        "variant": res.variant,
        "K": res.K,
        "converged": bool(res.converged),
        "outer_iters": int(res.outer_iters),
        "loglik": float(res.loglik),
        "aic": float(res.aic),
        "message": res.message,
        "names": list(res.names),
        "estimates": {n: float(v) for n, v in zip(res.names, res.values)},
        "se": {n: _num(v) for n, v in zip(res.names, res.se)},
        "vcov": [[_num(v) for v in row] for row in np.asarray(res.vcov)],
        "hessian_pd": bool(res.hessian_pd),
        "params": None if full is None else {k: float(v) for k, v in full.items()},
        "re_modes": None
        if res.re_modes is None
        else {sid: float(m) for sid, m in zip(res.subject_ids, res.re_modes)},
        "trace": [float(v) for v in res.trace],
    }
    return json.dumps(doc, indent=1, sort_keys=False) + "\n"


def _num(v):
    v = float(v)
    return v if math.isfinite(v) else None


def params_from_fit_file(path) -> ModelParams:
    """Two-state parameters from a fit written as JSON or as a CSV table."""
    text = Path(path).read_text()
    body = "\n".join(r for _, r in _data_lines(text))
    if body.lstrip().startswith("{"):
        doc = json.loads(body)
        if not doc.get("params"):
            raise ValidationError(f"{path}: fit has no two-state parameters")
        return ModelParams(**{k: float(doc["params"][k]) for k in PARAM_NAMES})
    cols, rows = read_table(path)
    if "parameter" not in cols or "estimate" not in cols:
        raise ValidationError(f"{path}: expected parameter and estimate columns")
    i, j = cols.index("parameter"), cols.index("estimate")
    vals = {r[i]: float(r[j]) for r in rows if r[i] in PARAM_NAMES}
    missing = [n for n in PARAM_NAMES if n not in vals]
    if missing:
        raise ValidationError(f"{path}: missing parameters {','.join(missing)}")
    return ModelParams(**vals)
