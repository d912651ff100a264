"""Report rendering: tables, JSON/CSV bundle, figures on disk."""

from __future__ import annotations

import csv
import json

from selfexam.evaluator import EvalReport, SweepRow, TaskResult
from selfexam.execution import OutcomeClass
from selfexam.report import (
    format_ablation_text,
    format_report_text,
    format_sweep_text,
    write_report_bundle,
)


def _report(**overrides) -> EvalReport:
    defaults = dict(
        dataset_name="synthetic",
        model_name="scripted-model",
        cfg={"mode": "codecot", "max_steps": 5, "num_tests": 5, "refine_tests": False},
        n_tasks=50,
        pass_at_k={1: 0.7},
        error_counts={"AssertError": 12, "SyntaxError": 3},
        task_results=[
            TaskResult("T0", 1, 1, OutcomeClass.PASS, tests_valid=True),
            TaskResult("T1", 1, 0, OutcomeClass.ASSERT_ERROR, tests_valid=False),
        ],
        dataset_sha256="ab" * 32,
        test_validity_rate=0.8,
    )
    defaults.update(overrides)
    return EvalReport(**defaults)


def test_text_report_one_decimal_percentages():
    text = format_report_text(_report())
    assert "pass@1" in text and "70.0%" in text
    assert "80.0%" in text  # validity
    assert "AssertError" in text and "SyntaxError" in text


def test_error_distribution_partitions_failing_set():
    report = _report()
    dist = report.error_distribution
    assert report.n_failing == 15
    assert dist["AssertError"] + dist["SyntaxError"] == 1.0
    zero = _report(error_counts={"AssertError": 0, "SyntaxError": 0})
    assert zero.error_distribution == {"AssertError": 0.0, "SyntaxError": 0.0}
    assert "failing tasks: none" in format_report_text(zero)


def test_sweep_and_ablation_tables():
    rows = [
        SweepRow(1, 0.5, 10, 5, {"AssertError": 0.6, "SyntaxError": 0.4}),
        SweepRow(5, 0.9, 10, 9, {"AssertError": 1.0, "SyntaxError": 0.0}),
    ]
    text = format_sweep_text(rows)
    assert "50.0%" in text and "90.0%" in text
    ablation = format_ablation_text(
        [
            {
                "mode": "coder",
                "pass_at_1": 0.25,
                "error_distribution": {"AssertError": 1.0, "SyntaxError": 0.0},
                "candidate_executions": 0,
            }
        ]
    )
    assert "coder" in ablation and "25.0%" in ablation and "0" in ablation


def test_bundle_writes_json_csv_and_figures(tmp_path):
    rows = [
        SweepRow(1, 0.5, 10, 5, {"AssertError": 0.6, "SyntaxError": 0.4}),
        SweepRow(3, 0.8, 10, 8, {"AssertError": 0.9, "SyntaxError": 0.1}),
    ]
    report = _report(per_step_rows=rows)
    written = write_report_bundle(report, tmp_path)
    names = {p.name for p in written}
    assert {"report.json", "report.txt", "per_task.csv", "sweep.csv",
            "error_distribution.png", "sweep_pass1.png"} <= names

    data = json.loads((tmp_path / "report.json").read_text())
    assert data["pass_at_k"]["1"] == 0.7
    assert data["error_counts"] == {"AssertError": 12, "SyntaxError": 3}
    assert data["test_validity_rate"] == 0.8

    with (tmp_path / "per_task.csv").open() as fh:
        rows_csv = list(csv.DictReader(fh))
    assert rows_csv[0]["task_id"] == "T0"
    assert rows_csv[1]["final_outcome_class"] == "AssertError"

    for figure in ("error_distribution.png", "sweep_pass1.png"):
        path = tmp_path / "figures" / figure
        assert path.stat().st_size > 1000
        assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"


def test_bundle_without_figures(tmp_path):
    written = write_report_bundle(_report(), tmp_path, figures=False)
    assert not (tmp_path / "figures").exists()
    assert {p.name for p in written} == {"report.json", "report.txt", "per_task.csv"}
