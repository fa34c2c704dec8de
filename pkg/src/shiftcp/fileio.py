"""File formats: logit tables, dataset CSVs, and report/plot-data CSVs.

Interchange files (logit tables, dataset exports) are written with 17
significant digits so a load reproduces the arrays bit for bit. Report and
plot-data CSVs are terminal outputs and use 6 significant digits with fixed,
locale-independent formatting, so identical runs produce identical bytes.

Logit table format (header is an exact contract):

    label,s0,s1,...,s{k-1}
    3,0.1,0.2,...

``raw_logits`` rows are converted to probabilities via the plain softmax at
load time; ``probabilities`` rows must lie in [0, 1] and sum to 1 +/- 1e-4.
Validation failures name the offending line.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DataFormatError
from .metrics import EvalReport
from .model import Dataset
from .numeric import softmax

ORIENTATIONS = ("probabilities", "raw_logits")
PROB_ROW_TOL = 1e-4

REPORT_COLUMNS = (
    "method",
    "dataset",
    "seed",
    "alpha",
    "n_points",
    "coverage",
    "avg_size",
    "empty_set_rate",
    "lce",
    "lce_signed",
    "lss",
    "window",
    "ece",
    "u_test",
    "factor",
    "tau",
    "quantile_mode",
)


def fmt6(value) -> str:
    """6-significant-digit rendering for report CSVs; stable for nan/inf."""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.6g}"


def fmt_exact(value: float) -> str:
    """Round-trip-exact rendering for interchange files."""
    return f"{float(value):.17g}"


# ---------------------------------------------------------------------------
# logit tables


@dataclass
class LogitTable:
    """External model scores: one label and k probabilities per row."""

    labels: np.ndarray
    probs: np.ndarray
    orientation: str = "probabilities"

    @property
    def n_classes(self) -> int:
        return self.probs.shape[1]

    def __len__(self) -> int:
        return self.probs.shape[0]


def load_logit_table(path, orientation: str = "probabilities") -> LogitTable:
    if orientation not in ORIENTATIONS:
        raise DataFormatError(f"unknown orientation {orientation!r}")
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from None
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    k = len(header) - 1
    if k < 2 or header[0] != "label" or header[1:] != [f"s{j}" for j in range(k)]:
        raise DataFormatError(
            f"{path}: line 1: header must be 'label,s0,...,s{{k-1}}', got {lines[0]!r}"
        )
    labels, rows = [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != k + 1:
            raise DataFormatError(
                f"{path}: line {lineno}: expected {k + 1} fields, got {len(parts)}"
            )
        try:
            label = int(parts[0])
            values = np.array([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
        if not 0 <= label < k:
            raise DataFormatError(
                f"{path}: line {lineno}: label {label} out of range [0, {k})"
            )
        if not np.all(np.isfinite(values)):
            raise DataFormatError(f"{path}: line {lineno}: non-finite score")
        if orientation == "probabilities":
            if np.any(values < 0) or np.any(values > 1):
                raise DataFormatError(
                    f"{path}: line {lineno}: probabilities must lie in [0, 1]"
                )
            total = values.sum()
            if abs(total - 1.0) > PROB_ROW_TOL:
                raise DataFormatError(
                    f"{path}: line {lineno}: row sums to {total:.6f}, "
                    f"expected 1 +/- {PROB_ROW_TOL}"
                )
            if abs(total - 1.0) > 1e-6:  # normalize only when strictly needed
                values = values / total
        else:
            values = softmax(values, temperature=1.0)
        labels.append(label)
        rows.append(values)
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    return LogitTable(
        labels=np.array(labels, dtype=np.int64),
        probs=np.vstack(rows),
        orientation=orientation,
    )


def save_logit_table(table: LogitTable, path) -> None:
    k = table.n_classes
    lines = ["label," + ",".join(f"s{j}" for j in range(k))]
    for label, row in zip(table.labels, table.probs):
        lines.append(f"{int(label)}," + ",".join(fmt_exact(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# dataset CSVs (label then covariates)


def save_dataset(data: Dataset, path) -> None:
    d = data.X.shape[1]
    lines = ["label," + ",".join(f"x{j}" for j in range(d))]
    for label, row in zip(data.y, data.X):
        lines.append(f"{int(label)}," + ",".join(fmt_exact(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_dataset(path, n_classes: int | None = None) -> Dataset:
    path = Path(path)
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataFormatError(f"cannot read {path}: {exc}") from None
    if not lines:
        raise DataFormatError(f"{path}: empty file")
    header = [h.strip() for h in lines[0].split(",")]
    d = len(header) - 1
    if d < 1 or header[0] != "label" or header[1:] != [f"x{j}" for j in range(d)]:
        raise DataFormatError(f"{path}: line 1: bad dataset header {lines[0]!r}")
    labels, rows = [], []
    for lineno, raw in enumerate(lines[1:], start=2):
        if not raw.strip():
            continue
        parts = raw.split(",")
        if len(parts) != d + 1:
            raise DataFormatError(
                f"{path}: line {lineno}: expected {d + 1} fields, got {len(parts)}"
            )
        try:
            labels.append(int(parts[0]))
            rows.append([float(v) for v in parts[1:]])
        except ValueError as exc:
            raise DataFormatError(f"{path}: line {lineno}: {exc}") from None
    if not rows:
        raise DataFormatError(f"{path}: no data rows")
    y = np.array(labels, dtype=np.int64)
    k = int(n_classes if n_classes is not None else y.max() + 1)
    try:
        return Dataset(np.array(rows), y, n_classes=k)
    except ValueError as exc:
        raise DataFormatError(f"{path}: {exc}") from None


# ---------------------------------------------------------------------------
# report and plot-data CSVs


def report_row(report: EvalReport, dataset: str, seed: int) -> dict:
    return {
        "method": report.method,
        "dataset": dataset,
        "seed": seed,
        "alpha": report.alpha,
        "n_points": report.n_points,
        "coverage": report.coverage,
        "avg_size": report.avg_size,
        "empty_set_rate": report.empty_set_rate,
        "lce": report.lce,
        "lce_signed": report.lce_signed,
        "lss": report.lss,
        "window": report.window,
        "ece": report.ece,
        "u_test": report.u_test,
        "factor": report.factor,
        "tau": report.tau,
        "quantile_mode": report.quantile_mode,
    }


def write_report_csv(rows: list[dict], path) -> None:
    lines = [",".join(REPORT_COLUMNS)]
    for row in rows:
        rendered = []
        for col in REPORT_COLUMNS:
            value = row[col]
            rendered.append(value if isinstance(value, str) else fmt6(value))
        lines.append(",".join(rendered))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_report_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for row in reader:
            parsed = dict(row)
            for col in REPORT_COLUMNS:
                if col in ("method", "dataset", "quantile_mode"):
                    continue
                value = parsed[col]
                parsed[col] = int(value) if col in ("seed", "n_points", "window") else float(value)
            rows.append(parsed)
        return rows


def write_table_csv(columns: tuple[str, ...], rows: list[tuple], path) -> None:
    """Generic numeric plot-data CSV at 6 significant digits."""
    lines = [",".join(columns)]
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt6(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_per_point_csv(report: EvalReport, path) -> None:
    if report.records is None:
        raise ValueError("report carries no per-point records")
    rec = report.records
    columns = ["index", "covered", "set_size"]
    if rec.severity is not None:
        columns.append("severity")
    if rec.u_test is not None:
        columns.append("u_test")
    lines = [",".join(columns)]
    for i in range(rec.covered.shape[0]):
        row = [str(i), str(int(rec.covered[i])), str(int(rec.set_size[i]))]
        if rec.severity is not None:
            row.append(str(int(rec.severity[i])))
        if rec.u_test is not None:
            row.append(fmt6(rec.u_test[i]))
        lines.append(",".join(row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")
