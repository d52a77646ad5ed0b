"""CSV input/output: survival features, predictions, per-case result rows.

All writers produce deterministic bytes: rows sorted by case_id, RFC 4180
quoting, floats via repr.
"""
from __future__ import annotations

import csv
from pathlib import Path
from typing import Iterable

from .refine import REGION_ORDER
from .survival import SurvivalRecord

SURVIVAL_COLUMNS = ("case_id", "age", "n_tumors", "n_cores", "survival_days")
PREDICTION_COLUMNS = ("case_id", "predicted_days")

_METRIC_COLUMNS = (
    "dice_et", "dice_wt", "dice_tc",
    "hd95_et", "hd95_wt", "hd95_tc",
)
_REFINE_COLUMNS = tuple(
    f"{region.value}_{suffix}"
    for region in REGION_ORDER
    for suffix in (
        "mean_confidence",
        "gate_triggered",
        "fallback_used",
        "core_substituted",
        "failsafe_triggered",
        "final_threshold",
    )
)
_AUC_COLUMNS = tuple(
    f"{kind}_auc_{region}" for kind in ("dice", "ftp", "ftn") for region in ("et", "wt", "tc")
)
CASE_RESULT_COLUMNS = ("case_id",) + _METRIC_COLUMNS + _REFINE_COLUMNS + _AUC_COLUMNS

# Summary rows aggregate the metric-like columns only.
SUMMARY_COLUMNS = _METRIC_COLUMNS + _AUC_COLUMNS


def _format_cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _write_rows(path, header: tuple[str, ...], rows: Iterable[Iterable]) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_format_cell(v) for v in row])


def _read_rows(path, required: tuple[str, ...]) -> tuple[list[str], list[dict[str, str]]]:
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [col for col in required if col not in header]
        if missing:
            raise ValueError(f"{path}: missing required column(s): {', '.join(missing)}")
        return list(header), list(reader)


def write_survival_table(path, records: Iterable[SurvivalRecord]) -> None:
    rows = [
        (r.case_id, r.age, r.n_tumors, r.n_cores, r.survival_days)
        for r in sorted(records, key=lambda r: r.case_id)
    ]
    _write_rows(path, SURVIVAL_COLUMNS, rows)


def read_survival_table(path) -> list[SurvivalRecord]:
    _, rows = _read_rows(path, SURVIVAL_COLUMNS)
    records = []
    for row in rows:
        survival = row.get("survival_days", "")
        records.append(
            SurvivalRecord(
                case_id=row["case_id"],
                age=float(row["age"]),
                n_tumors=int(row["n_tumors"]),
                n_cores=int(row["n_cores"]),
                survival_days=float(survival) if survival not in ("", None) else None,
                resection_status=row.get("resection_status") or None,
            )
        )
    return records


def write_predictions_table(path, rows: Iterable[tuple[str, float]]) -> None:
    _write_rows(path, PREDICTION_COLUMNS, sorted(rows, key=lambda r: r[0]))


def read_predictions_table(path) -> list[tuple[str, float]]:
    _, rows = _read_rows(path, PREDICTION_COLUMNS)
    return [(row["case_id"], float(row["predicted_days"])) for row in rows]


def write_results_table(path, records: list[dict], summary: bool = True) -> None:
    """Per-case result rows in fixed column order, plus mean/std summary rows."""
    records = sorted(records, key=lambda r: str(r.get("case_id", "")))
    rows = [[_pick(rec, col) for col in CASE_RESULT_COLUMNS] for rec in records]
    if summary and records:
        for stat, fn in (("mean", _mean), ("std", _std)):
            row = [stat]
            for col in CASE_RESULT_COLUMNS[1:]:
                if col not in SUMMARY_COLUMNS:
                    row.append(None)
                    continue
                values = [rec[col] for rec in records if _is_number(rec.get(col))]
                row.append(fn(values) if values else None)
            rows.append(row)
    _write_rows(path, CASE_RESULT_COLUMNS, rows)


def read_case_table(path, required: tuple[str, ...] = ("case_id",)) -> list[dict[str, str]]:
    _, rows = _read_rows(path, required)
    return rows


def _pick(rec: dict, col: str):
    return rec.get(col)


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool)


def _mean(values) -> float:
    return float(sum(values) / len(values))


def _std(values) -> float:
    m = _mean(values)
    return float((sum((v - m) ** 2 for v in values) / len(values)) ** 0.5)
