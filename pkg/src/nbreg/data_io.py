"""CSV ingestion, column standardization, and report serialization.

Input files are header-first CSV (UTF-8, decimal point); every covariate
must parse as a number and the response as a non-negative integer, and any
offending cell is reported with its line and column.  Standardization
centers each column and scales it to unit mean square, recording the
applied shifts/scales so fitted coefficients can be mapped back to the
original variable units.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParseError
from .model import Dataset

__all__ = [
    "DataFile",
    "StandardizationRecord",
    "load_csv",
    "standardize",
    "standardize_columns",
    "json_ready",
    "render_report",
    "scenario_csv_header",
    "scenario_csv_row",
]


@dataclass
class DataFile:
    """Where and how to read a dataset.

    ``covariate_columns`` is either the literal "all-others" or an explicit
    list of column names.  Without a header row, columns are addressed by
    0-based index rendered as x0, x1, ... and ``response_column`` must be
    such an index string.
    """

    path: str
    response_column: str
    covariate_columns: list[str] | str = "all-others"
    has_header: bool = True
    delimiter: str = ","


def _parse_number(token: str, line_no: int, column: str) -> float:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(
            f"line {line_no}, column '{column}': could not parse {token!r} as a number"
        ) from None
    if not math.isfinite(value):
        raise ParseError(
            f"line {line_no}, column '{column}': non-finite value {token!r}"
        )
    return value


def load_csv(file: DataFile) -> Dataset:
    """Read a delimited text file into an (unstandardized) Dataset.

    Raises ParseError naming the offending line/column on ragged rows,
    non-numeric covariates, or responses that are not non-negative integers.
    """
    with open(file.path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle, delimiter=file.delimiter)
        rows = [(i + 1, row) for i, row in enumerate(reader) if row]
    if not rows:
        raise ParseError(f"{file.path}: file holds no data rows")

    if file.has_header:
        header_line, header = rows[0]
        names = [cell.strip() for cell in header]
        data_rows = rows[1:]
    else:
        width = len(rows[0][1])
        names = [f"x{i}" for i in range(width)]
        data_rows = rows
    if not data_rows:
        raise ParseError(f"{file.path}: file holds a header but no data rows")

    if file.response_column not in names:
        raise ParseError(f"response column '{file.response_column}' not found")
    response_idx = names.index(file.response_column)

    if file.covariate_columns == "all-others":
        covariate_idx = [i for i in range(len(names)) if i != response_idx]
    else:
        covariate_idx = []
        for name in file.covariate_columns:
            if name not in names:
                raise ParseError(f"covariate column '{name}' not found")
            covariate_idx.append(names.index(name))
    if not covariate_idx:
        raise ParseError("no covariate columns selected")

    X_rows: list[list[float]] = []
    y_values: list[int] = []
    for line_no, row in data_rows:
        if len(row) != len(names):
            raise ParseError(
                f"line {line_no}: expected {len(names)} fields, found {len(row)}"
            )
        response = _parse_number(row[response_idx].strip(), line_no, file.response_column)
        if response != math.floor(response):
            raise ParseError(
                f"line {line_no}: non-integer response {row[response_idx].strip()!r}"
            )
        if response < 0:
            raise ParseError(
                f"line {line_no}: negative response {row[response_idx].strip()!r}"
            )
        y_values.append(int(response))
        X_rows.append(
            [_parse_number(row[j].strip(), line_no, names[j]) for j in covariate_idx]
        )

    return Dataset(
        X=np.asarray(X_rows, dtype=float),
        y=np.asarray(y_values),
        standardized=None,
        feature_names=tuple(names[j] for j in covariate_idx),
    )


@dataclass
class StandardizationRecord:
    """Per-column centering shifts and scales applied by ``standardize``.

    Constant columns keep scale 1 (their standardized values are all zero)
    and are flagged in ``constant``.
    """

    means: np.ndarray
    scales: np.ndarray
    constant: np.ndarray
    feature_names: tuple[str, ...] | None = None

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Standardize new rows with the recorded shifts and scales."""
        X = np.asarray(X, dtype=float)
        return (X - self.means) / self.scales

    def original_scale_coefficients(
        self, beta: np.ndarray, intercept: float = 0.0
    ) -> tuple[np.ndarray, float]:
        """Map coefficients fitted on standardized columns back to the
        original units: beta_j / scale_j, with the centering shifts folded
        into the intercept."""
        beta = np.asarray(beta, dtype=float)
        beta_orig = beta / self.scales
        intercept_orig = float(intercept - np.sum(beta * self.means / self.scales))
        return beta_orig, intercept_orig

    def to_dict(self) -> dict:
        return {
            "means": self.means.tolist(),
            "scales": self.scales.tolist(),
            "constant": self.constant.astype(bool).tolist(),
            "feature_names": list(self.feature_names) if self.feature_names else None,
        }


def standardize_columns(X: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Center each column and scale to unit mean square.

    Returns (standardized X, means, scales, constant-column mask); constant
    columns become all zeros with recorded scale 1.
    """
    X = np.asarray(X, dtype=float)
    means = X.mean(axis=0)
    centered = X - means
    meansq = (centered * centered).mean(axis=0)
    constant = meansq == 0.0
    scales = np.where(constant, 1.0, np.sqrt(meansq))
    return centered / scales, means, scales, constant


def standardize(data: Dataset) -> tuple[Dataset, StandardizationRecord]:
    """Standardize every covariate column of ``data``.

    Idempotent to 1e-12: already-standardized columns come back unchanged.
    """
    if data.n < 2:
        raise DomainError("standardization needs at least two rows")
    X_std, means, scales, constant = standardize_columns(data.X)
    record = StandardizationRecord(
        means=means, scales=scales, constant=constant, feature_names=data.feature_names
    )
    out = Dataset(
        X=X_std, y=data.y, standardized=True, feature_names=data.feature_names
    )
    return out, record


def json_ready(obj):
    """Recursively convert numpy scalars/arrays and dataclass-ish values into
    plain JSON-serializable Python objects (floats round-trip exactly)."""
    if isinstance(obj, dict):
        return {str(k): json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [json_ready(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        value = float(obj)
        if math.isnan(value):
            return None
        return value
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    return obj


def render_report(command: str, config: dict, results: dict, warnings_list: list[str]) -> str:
    """Serialize one command report with the fixed top-level schema
    {command, config, results, warnings}."""
    payload = {
        "command": command,
        "config": json_ready(config),
        "results": json_ready(results),
        "warnings": [str(w) for w in warnings_list],
    }
    return json.dumps(payload, indent=2)


SCENARIO_CSV_COLUMNS = (
    "n",
    "p",
    "r",
    "rho",
    "est_error_mean",
    "est_error_sd",
    "sensitivity",
    "specificity",
    "reps",
    "seed",
)


def scenario_csv_header() -> str:
    return ",".join(SCENARIO_CSV_COLUMNS)


def scenario_csv_row(spec, summary) -> str:
    """One CSV line for a scenario and its metric summary."""
    values = (
        spec.n,
        spec.p,
        spec.r,
        spec.rho,
        summary.est_error_mean,
        summary.est_error_sd,
        summary.sensitivity,
        summary.specificity,
        spec.reps,
        spec.seed,
    )
    return ",".join(repr(v) if isinstance(v, float) else str(v) for v in values)
