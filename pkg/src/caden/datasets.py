"""Reading, writing and analysing externally supplied stage-1 datasets.

Expected layout: a delimited text file with a header row, one patient per
line. Three columns hold the patient id, the treatment arm (0/1) and the
response (0/1); every other column is a numeric covariate. Nothing is
imputed: a blank or unparsable cell is an error naming its line and column.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .engine import DesignConfig, evaluate_interim
from .records import Cohort, PatientRecord, as_cohort

DEFAULT_SCHEMA = {"id": "id", "treatment": "treatment", "response": "response"}


class DataValidationError(ValueError):
    """Malformed input data; the message locates the offending cell."""


@dataclass(frozen=True)
class DatasetSchema:
    id: str = "id"
    treatment: str = "treatment"
    response: str = "response"
    delimiter: Optional[str] = None  # sniffed from the header when None

    @classmethod
    def from_mapping(cls, mapping: Optional[dict]) -> "DatasetSchema":
        if mapping is None:
            return cls()
        if isinstance(mapping, DatasetSchema):
            return mapping
        unknown = set(mapping) - {"id", "treatment", "response", "delimiter"}
        if unknown:
            raise ValueError(f"unknown schema keys: {sorted(unknown)}")
        return cls(**mapping)


def _binary(value: str, line: int, column: str) -> int:
    text = value.strip()
    if text == "":
        raise DataValidationError(f"line {line}, column {column!r}: missing value")
    try:
        number = float(text)
    except ValueError:
        raise DataValidationError(f"line {line}, column {column!r}: {text!r} is not 0 or 1") from None
    if number not in (0.0, 1.0):
        raise DataValidationError(f"line {line}, column {column!r}: {text!r} is not 0 or 1")
    return int(number)


def _number(value: str, line: int, column: str) -> float:
    text = value.strip()
    if text == "":
        raise DataValidationError(f"line {line}, column {column!r}: missing value")
    try:
        number = float(text)
    except ValueError:
        raise DataValidationError(f"line {line}, column {column!r}: {text!r} is not numeric") from None
    if not math.isfinite(number):
        raise DataValidationError(f"line {line}, column {column!r}: {text!r} is not finite")
    return number


def ingest_dataset(path, schema=None) -> list[PatientRecord]:
    """Validated patient records from a delimited file.

    ``schema`` maps the roles ``id``, ``treatment`` and ``response`` to header
    names (defaults: the same names). Line numbers in error messages count the
    header as line 1.
    """
    schema = DatasetSchema.from_mapping(schema)
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataValidationError(f"cannot read {path}: {exc}") from None
    lines = text.splitlines()
    if not lines or not lines[0].strip():
        raise DataValidationError(f"{path}: empty file or missing header")
    delimiter = schema.delimiter
    if delimiter is None:
        try:
            delimiter = csv.Sniffer().sniff(lines[0], delimiters=",;\t").delimiter
        except csv.Error:
            delimiter = ","

    reader = csv.reader(lines, delimiter=delimiter)
    header = [h.strip() for h in next(reader)]
    if len(set(header)) != len(header):
        dupes = sorted({h for h in header if header.count(h) > 1})
        raise DataValidationError(f"line 1: duplicate column names {dupes}")
    roles = {"id": schema.id, "treatment": schema.treatment, "response": schema.response}
    for role, name in roles.items():
        if name not in header:
            raise DataValidationError(f"line 1: no {role} column named {name!r} in header")
    pos = {role: header.index(name) for role, name in roles.items()}
    cov_idx = [i for i in range(len(header)) if i not in pos.values()]

    records = []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        if len(row) != len(header):
            raise DataValidationError(f"line {lineno}: expected {len(header)} fields, found {len(row)}")
        pid = row[pos["id"]].strip()
        if pid == "":
            raise DataValidationError(f"line {lineno}, column {schema.id!r}: missing value")
        records.append(PatientRecord(
            id=pid,
            treatment=_binary(row[pos["treatment"]], lineno, schema.treatment),
            covariates=tuple(_number(row[i], lineno, header[i]) for i in cov_idx),
            response=_binary(row[pos["response"]], lineno, schema.response),
        ))
    if not records:
        raise DataValidationError(f"{path}: no data rows")
    ids = [r.id for r in records]
    if len(set(ids)) != len(ids):
        seen = set()
        for lineno, pid in enumerate(ids, start=2):
            if pid in seen:
                raise DataValidationError(f"line {lineno}, column {schema.id!r}: duplicate patient id {pid!r}")
            seen.add(pid)
    return records


def export_dataset(patients, path, covariate_names: Optional[Sequence[str]] = None, schema=None) -> None:
    """Write patients in the layout ``ingest_dataset`` reads (repr floats, so values survive)."""
    schema = DatasetSchema.from_mapping(schema)
    records = patients.records() if isinstance(patients, Cohort) else list(patients)
    if not records:
        raise ValueError("no patients to export")
    width = len(records[0].covariates)
    names = list(covariate_names) if covariate_names is not None else [f"x{j + 1}" for j in range(width)]
    if len(names) != width:
        raise ValueError(f"{len(names)} covariate names for {width} covariates")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, delimiter=schema.delimiter or ",", lineterminator="\n")
        writer.writerow([schema.id, schema.treatment, schema.response, *names])
        for r in records:
            if r.response is None:
                raise ValueError(f"patient {r.id} has no response")
            writer.writerow([r.id, r.treatment, r.response, *(repr(float(v)) for v in r.covariates)])


def analyze_stage1(patients, cfg: DesignConfig, seed=None) -> dict:
    """Interim analysis of one observed stage-1 cohort as a JSON-ready dict."""
    cohort = as_cohort(patients)
    stats = evaluate_interim(cohort, cfg, seed)
    decision = stats.decide(cfg)
    t, y = cohort.treatment, cohort.response
    report = {
        "schema_version": 1,
        "n_patients": len(cohort),
        "n_treated": int(np.sum(t == 1)),
        "n_control": int(np.sum(t == 0)),
        "n_covariates": cohort.n_covariates,
        "response_rate_treated": float(y[t == 1].mean()) if np.any(t == 1) else None,
        "response_rate_control": float(y[t == 0].mean()) if np.any(t == 0) else None,
        "strategy": decision.strategy.value,
        "p_overall": float(stats.p_overall),
        "p_promise": None if stats.p_promise is None else float(stats.p_promise),
        "design": {
            "alpha_1": cfg.alpha_1, "alpha_2": cfg.alpha_2, "alpha_O": cfg.alpha_O, "alpha_S": cfg.alpha_S,
            "n_folds": cfg.n_folds, "promise_test": cfg.promise_test, "contrast": list(cfg.contrast),
        },
        "model": None if stats.model is None else stats.model.to_dict(),
        "n_predicted_sensitive": None if stats.cv is None else int(stats.cv.labels.sum()),
        "flags": list(stats.flags),
    }
    if stats.cv is not None and cohort.ids is not None:
        report["cv_labels"] = {str(i): int(lab) for i, lab in zip(cohort.ids, stats.cv.labels)}
    return report
