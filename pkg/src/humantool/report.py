"""Activation report rendering: aligned text, delimited CSV, JSON, and a
four-panel horizontal bar figure.

The figure mirrors the report's four count tables -- why the human was
needed, when (by stage), communication principle outcomes, and interaction
behaviors -- one panel each, saved to file for offline inspection alongside
the machine-readable outputs.
"""

from __future__ import annotations

import csv
import io
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .store import ActivationReport

_TABLE_TITLES = (
    ("why_need_human", "Why need human"),
    ("when_need_human", "When need human"),
    ("communication_principles", "Communication principles"),
    ("interaction_behaviors", "Interaction behaviors"),
)


def _principle_rows(report: ActivationReport) -> list[tuple[str, int]]:
    rows = []
    for guideline, verdicts in report.communication_principles.items():
        for verdict, count in verdicts.items():
            rows.append((f"{guideline}.{verdict}", count))
    return rows


def _table_rows(report: ActivationReport, table: str) -> list[tuple[str, int]]:
    if table == "communication_principles":
        return _principle_rows(report)
    return list(getattr(report, table).items())


def render_text(report: ActivationReport) -> str:
    """Aligned plain-text tables, one block per category."""
    blocks = []
    for table, title in _TABLE_TITLES:
        rows = _table_rows(report, table)
        width = max(len(key) for key, _ in rows)
        lines = [title, "-" * len(title)]
        lines += [f"{key.ljust(width)}  {count:>5d}" for key, count in rows]
        blocks.append("\n".join(lines))
    totals = report.totals
    blocks.append(
        "Totals\n------\n"
        + "\n".join(f"{key.ljust(22)}  {value:>5d}" for key, value in totals.items())
    )
    return "\n\n".join(blocks) + "\n"


def render_csv(report: ActivationReport) -> str:
    """Delimited rows: table,key,count."""
    buffer = io.StringIO()
    writer = csv.writer(buffer)
    writer.writerow(["table", "key", "count"])
    for table, _ in _TABLE_TITLES:
        for key, count in _table_rows(report, table):
            writer.writerow([table, key, count])
    for key, value in report.totals.items():
        writer.writerow(["totals", key, value])
    return buffer.getvalue()


def render_json(report: ActivationReport) -> str:
    return json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"


def render_figure(report: ActivationReport, path: Path | str) -> Path:
    """Save the 2x2 horizontal-bar activation figure."""
    path = Path(path)
    fig, axes = plt.subplots(2, 2, figsize=(11, 8))
    for ax, (table, title) in zip(axes.flat, _TABLE_TITLES):
        rows = _table_rows(report, table)
        labels = [key for key, _ in rows]
        counts = [count for _, count in rows]
        positions = range(len(rows))
        ax.barh(positions, counts, color="#4878a8")
        ax.set_yticks(list(positions))
        ax.set_yticklabels(labels, fontsize=7)
        ax.invert_yaxis()
        ax.set_title(title, fontsize=10)
        ax.set_xlabel("activations", fontsize=8)
        ax.tick_params(axis="x", labelsize=7)
    fig.tight_layout()
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def write_report_files(report: ActivationReport, out_dir: Path | str, stem: str = "report") -> dict[str, Path]:
    """Write all four renderings side by side; returns the paths by format."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {
        "json": out / f"{stem}.json",
        "txt": out / f"{stem}.txt",
        "csv": out / f"{stem}.csv",
        "png": out / f"{stem}.png",
    }
    paths["json"].write_text(render_json(report), encoding="utf-8")
    paths["txt"].write_text(render_text(report), encoding="utf-8")
    paths["csv"].write_text(render_csv(report), encoding="utf-8")
    render_figure(report, paths["png"])
    return paths
