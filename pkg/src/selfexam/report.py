"""Render evaluation results: aligned text tables to stdout, a JSON report,
CSV files, and matplotlib figures written alongside them.

Percentages are displayed to one decimal; the JSON carries full precision.
Figures are drawn with the object-oriented matplotlib API (no pyplot, no
global backend state), so rendering works headless.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Sequence

from matplotlib.figure import Figure

from .evaluator import EvalReport, SweepRow
from .execution import OutcomeClass

ASSERT_BUCKET = OutcomeClass.ASSERT_ERROR.value
SYNTAX_BUCKET = OutcomeClass.SYNTAX_ERROR.value


def _pct(fraction: float) -> str:
    return f"{100.0 * fraction:.1f}%"


def _table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    widths = [len(h) for h in headers]
    for row in rows:
        for i, cell in enumerate(row):
            widths[i] = max(widths[i], len(cell))
    def fmt(cells: Sequence[str]) -> str:
        return "  ".join(cell.ljust(widths[i]) for i, cell in enumerate(cells)).rstrip()
    rule = "  ".join("-" * w for w in widths)
    return "\n".join([fmt(headers), rule] + [fmt(row) for row in rows])


def format_report_text(report: EvalReport) -> str:
    """The human-readable report printed after scoring."""
    lines = [
        f"dataset:  {report.dataset_name}"
        + (f"  (sha256 {report.dataset_sha256[:12]})" if report.dataset_sha256 else ""),
        f"model:    {report.model_name or '-'}",
        f"tasks:    {report.n_tasks}"
        + (f"  ({report.n_errored} errored records excluded)" if report.n_errored else ""),
    ]
    if report.cfg:
        cfg = report.cfg
        lines.append(
            "config:   mode={mode} max_steps={max_steps} num_tests={num_tests} "
            "refine_tests={refine_tests}".format(**cfg)
        )
    lines.append("")
    lines.append(
        _table(
            ["metric", "value"],
            [[f"pass@{k}", _pct(v)] for k, v in sorted(report.pass_at_k.items())],
        )
    )
    lines.append("")
    if report.n_failing:
        dist = report.error_distribution
        lines.append(
            _table(
                ["failing tasks", ASSERT_BUCKET, SYNTAX_BUCKET],
                [
                    [
                        str(report.n_failing),
                        f"{_pct(dist[ASSERT_BUCKET])} ({report.error_counts[ASSERT_BUCKET]})",
                        f"{_pct(dist[SYNTAX_BUCKET])} ({report.error_counts[SYNTAX_BUCKET]})",
                    ]
                ],
            )
        )
    else:
        lines.append("failing tasks: none")
    if report.test_validity_rate is not None:
        lines.append("")
        lines.append(f"generated-test validity on canonical solutions: {_pct(report.test_validity_rate)}")
    if report.per_step_rows:
        lines.append("")
        lines.append(format_sweep_text(report.per_step_rows))
    return "\n".join(lines) + "\n"


def format_sweep_text(rows: Sequence[SweepRow]) -> str:
    return _table(
        ["steps", "pass@1", ASSERT_BUCKET, SYNTAX_BUCKET],
        [
            [
                str(r.max_steps),
                _pct(r.pass_at_1),
                _pct(r.error_distribution[ASSERT_BUCKET]),
                _pct(r.error_distribution[SYNTAX_BUCKET]),
            ]
            for r in rows
        ],
    )


def format_ablation_text(rows: Sequence[dict]) -> str:
    return _table(
        ["mode", "pass@1", ASSERT_BUCKET, SYNTAX_BUCKET, "candidate execs"],
        [
            [
                r["mode"],
                _pct(r["pass_at_1"]),
                _pct(r["error_distribution"][ASSERT_BUCKET]),
                _pct(r["error_distribution"][SYNTAX_BUCKET]),
                str(r["candidate_executions"]),
            ]
            for r in rows
        ],
    )


# ---------------------------------------------------------------------------
# Delimited output
# ---------------------------------------------------------------------------


def write_per_task_csv(report: EvalReport, path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["task_id", "n_samples", "n_correct", "final_outcome_class", "tests_valid"])
        for r in report.task_results:
            writer.writerow(
                [
                    r.task_id,
                    r.n_samples,
                    r.n_correct,
                    r.final_outcome_class.value,
                    "" if r.tests_valid is None else r.tests_valid,
                ]
            )


def write_sweep_csv(rows: Sequence[SweepRow], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["max_steps", "pass_at_1", "assert_fraction", "syntax_fraction"])
        for r in rows:
            writer.writerow(
                [
                    r.max_steps,
                    r.pass_at_1,
                    r.error_distribution[ASSERT_BUCKET],
                    r.error_distribution[SYNTAX_BUCKET],
                ]
            )


def write_ablation_csv(rows: Sequence[dict], path: Path) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["mode", "pass_at_1", "assert_fraction", "syntax_fraction", "candidate_executions"]
        )
        for r in rows:
            writer.writerow(
                [
                    r["mode"],
                    r["pass_at_1"],
                    r["error_distribution"][ASSERT_BUCKET],
                    r["error_distribution"][SYNTAX_BUCKET],
                    r["candidate_executions"],
                ]
            )


# ---------------------------------------------------------------------------
# Figures
# ---------------------------------------------------------------------------


def render_error_distribution_figure(report: EvalReport, path: Path) -> None:
    dist = report.error_distribution
    fig = Figure(figsize=(5, 4))
    ax = fig.subplots()
    buckets = [ASSERT_BUCKET, SYNTAX_BUCKET]
    values = [100.0 * dist[b] for b in buckets]
    ax.bar(buckets, values, color=["#4c72b0", "#c44e52"])
    for x, v in enumerate(values):
        ax.annotate(f"{v:.1f}%", (x, v), ha="center", va="bottom")
    ax.set_ylabel("share of failing tasks (%)")
    ax.set_ylim(0, 105)
    ax.set_title(f"Error distribution over {report.n_failing} failing tasks")
    fig.tight_layout()
    fig.savefig(path, dpi=120)


def render_sweep_figure(rows: Sequence[SweepRow], path: Path) -> None:
    fig = Figure(figsize=(5.5, 4))
    ax = fig.subplots()
    xs = [r.max_steps for r in rows]
    ax.plot(xs, [100.0 * r.pass_at_1 for r in rows], marker="o", label="pass@1")
    ax.plot(
        xs,
        [100.0 * r.error_distribution[SYNTAX_BUCKET] for r in rows],
        marker="s",
        linestyle="--",
        label=f"{SYNTAX_BUCKET} share of failures",
    )
    ax.set_xlabel("repair steps")
    ax.set_ylabel("%")
    ax.set_xticks(xs)
    ax.set_ylim(-2, 105)
    ax.legend()
    ax.set_title("Effect of the repair budget")
    fig.tight_layout()
    fig.savefig(path, dpi=120)


def render_ablation_figure(rows: Sequence[dict], path: Path) -> None:
    fig = Figure(figsize=(5.5, 4))
    ax = fig.subplots()
    modes = [r["mode"] for r in rows]
    ax.bar(modes, [100.0 * r["pass_at_1"] for r in rows], color="#55a868")
    for x, r in enumerate(rows):
        ax.annotate(f"{100.0 * r['pass_at_1']:.1f}%", (x, 100.0 * r["pass_at_1"]),
                    ha="center", va="bottom")
    ax.set_ylabel("pass@1 (%)")
    ax.set_ylim(0, 105)
    ax.set_title("Pipeline components")
    fig.tight_layout()
    fig.savefig(path, dpi=120)


def write_report_bundle(
    report: EvalReport, out_dir: str | Path, figures: bool = True
) -> list[Path]:
    """Write report.json, report.txt, CSVs, and figures under ``out_dir``.

    Returns the list of files written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    json_path = out / "report.json"
    json_path.write_text(
        json.dumps(report.as_dict(), indent=2, sort_keys=True, ensure_ascii=True) + "\n",
        encoding="utf-8",
    )
    written.append(json_path)

    text_path = out / "report.txt"
    text_path.write_text(format_report_text(report), encoding="utf-8")
    written.append(text_path)

    per_task = out / "per_task.csv"
    write_per_task_csv(report, per_task)
    written.append(per_task)

    if report.per_step_rows:
        sweep_path = out / "sweep.csv"
        write_sweep_csv(report.per_step_rows, sweep_path)
        written.append(sweep_path)

    if figures:
        fig_dir = out / "figures"
        fig_dir.mkdir(exist_ok=True)
        dist_path = fig_dir / "error_distribution.png"
        render_error_distribution_figure(report, dist_path)
        written.append(dist_path)
        if report.per_step_rows:
            sweep_fig = fig_dir / "sweep_pass1.png"
            render_sweep_figure(report.per_step_rows, sweep_fig)
            written.append(sweep_fig)
    return written
