"""CSV output for experiment records, decision logs and per-retrain summaries."""

from __future__ import annotations

import csv
import math
from collections import defaultdict
from pathlib import Path
from typing import Sequence

from .experiment import DecisionRecord, ExperimentRecord

RECORD_COLUMNS = ("trial", "retrain_index", "samples_seen", "labels_spent", "dataset_size",
                  "test_accuracy", "mean_decision_time_s", "retrain_time_s")
DECISION_COLUMNS = ("trial", "stream_id", "informativeness", "diversity_after", "gamma", "delta",
                    "kept", "trigger_fired")
SUMMARY_COLUMNS = ("retrain_index", "mean_accuracy", "var_accuracy", "mean_labels_spent")


def _cell(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def record_rows(records: Sequence[ExperimentRecord]) -> list[list[str]]:
    return [[_cell(getattr(r, c)) for c in RECORD_COLUMNS] for r in records]


def decision_rows(decisions: Sequence[DecisionRecord]) -> list[list[str]]:
    rows = []
    for rec in decisions:
        d = rec.decision
        rows.append([_cell(v) for v in (rec.trial, d.sample_id, d.informativeness, d.diversity_after,
                                        d.gamma, d.delta, d.kept, d.trigger_fired)])
    return rows


def summarize(records: Sequence[ExperimentRecord]) -> list[tuple[int, float, float, float]]:
    """Mean and population variance of accuracy across trials, per retrain index."""
    groups = defaultdict(list)
    for r in records:
        groups[r.retrain_index].append(r)
    out = []
    for n in sorted(groups):
        acc = [r.test_accuracy for r in groups[n]]
        mean = math.fsum(acc) / len(acc)
        var = math.fsum((a - mean) ** 2 for a in acc) / len(acc)
        labels = math.fsum(r.labels_spent for r in groups[n]) / len(groups[n])
        out.append((n, mean, var, labels))
    return out


def summary_rows(records: Sequence[ExperimentRecord]) -> list[list[str]]:
    return [[_cell(v) for v in row] for row in summarize(records)]


def write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[str]]) -> None:
    try:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            writer.writerows(rows)
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc.strerror or exc}") from exc


def write_results(records: Sequence[ExperimentRecord], decisions: Sequence[DecisionRecord],
                  path: str | Path) -> dict[str, Path]:
    """Write records.csv, decisions.csv and summary.csv into directory ``path``."""
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out}: {exc.strerror or exc}") from exc
    files = {"records": out / "records.csv", "decisions": out / "decisions.csv", "summary": out / "summary.csv"}
    write_csv(files["records"], RECORD_COLUMNS, record_rows(records))
    write_csv(files["decisions"], DECISION_COLUMNS, decision_rows(decisions))
    write_csv(files["summary"], SUMMARY_COLUMNS, summary_rows(records))
    return files


def read_csv(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
