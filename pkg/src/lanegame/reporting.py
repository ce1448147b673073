"""CSV emission and merging for training metrics and evaluation reports.

Files are written through a ``<name>.incomplete`` staging path and renamed
into place, so anything the CLI leaves behind is either complete and
schema-valid or explicitly marked incomplete. UTF-8, header row, '.'
decimal separator.
"""

from __future__ import annotations

import csv
import os
from pathlib import Path

from lanegame.evaluation import EvalReport

METRICS_HEADER = [
    "iteration",
    "player",
    "mean_reward",
    "failure_rate",
    "mean_abs_d_accel",
    "mean_abs_d_steer",
    "wall_time_s",
]

EVAL_HEADER = [
    "policy_id",
    "test_id",
    "param",
    "n_rollouts",
    "mean_reward",
    "stderr",
    "failure_rate",
    "seed",
]


def fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def _atomic_write(path: Path, text: str) -> None:
    staged = path.with_name(path.name + ".incomplete")
    staged.write_text(text, encoding="utf-8")
    os.replace(staged, path)


def write_metrics_csv(rows: list[dict], path) -> None:
    path = Path(path)
    lines = [",".join(METRICS_HEADER)]
    for row in rows:
        lines.append(",".join(fmt(row[col]) for col in METRICS_HEADER))
    _atomic_write(path, "\n".join(lines) + "\n")


def eval_report_row(report: EvalReport) -> list[str]:
    return [
        report.policy_id,
        report.test_id,
        report.param,
        fmt(report.n_rollouts),
        fmt(report.mean_reward),
        fmt(report.stderr),
        fmt(report.failure_rate),
        fmt(report.seed),
    ]


def append_eval_reports(reports: list[EvalReport], path) -> None:
    """Append report rows, creating the file with a header when absent.
    The whole file is rewritten through the staging path."""
    path = Path(path)
    lines = []
    if path.exists():
        lines = path.read_text(encoding="utf-8").rstrip("\n").split("\n")
    if not lines:
        lines = [",".join(EVAL_HEADER)]
    for report in reports:
        lines.append(",".join(eval_report_row(report)))
    _atomic_write(path, "\n".join(lines) + "\n")


def merge_eval_csvs(run_dir) -> tuple[list[dict], list[str]]:
    """Merge every eval_*.csv under ``run_dir`` into one table keyed by
    (policy_id, test_id, param). On duplicate keys the row from the most
    recently modified file (or the latest row within a file) wins; each
    override produces a warning message."""
    run_dir = Path(run_dir)
    files = sorted(run_dir.glob("eval_*.csv"), key=lambda p: (p.stat().st_mtime, p.name))
    merged: dict[tuple[str, str, str], dict] = {}
    warnings: list[str] = []
    for path in files:
        with open(path, "r", encoding="utf-8", newline="") as fh:
            for row in csv.DictReader(fh):
                key = (row["policy_id"], row["test_id"], row["param"])
                if key in merged:
                    warnings.append(
                        f"duplicate result for policy={key[0]} test={key[1]} "
                        f"param={key[2]}; keeping the latest ({path.name})"
                    )
                merged[key] = row
    rows = [merged[key] for key in sorted(merged)]
    return rows, warnings


def write_report_csv(rows: list[dict], path) -> None:
    path = Path(path)
    lines = [",".join(EVAL_HEADER)]
    for row in rows:
        lines.append(",".join(row[col] for col in EVAL_HEADER))
    _atomic_write(path, "\n".join(lines) + "\n")
