"""Execution: outcome classification, subprocess transport, program assembly."""

from __future__ import annotations

import json
import time

import pytest

from selfexam.errors import BackendUnavailableError
from selfexam.execution import (
    BackendResult,
    ExecutionOutcome,
    Executor,
    ExecutorSpec,
    OutcomeClass,
    SubprocessBackend,
    assemble_program,
    classify,
    reference_statement,
    run_candidate,
    run_reference,
)
from selfexam.response_parser import GenerationArtifact

from support import FAKE_SPEC, CallableBackend, make_task, write_fake_runner


def _result(stdout="", stderr="", exit_code=0, timed_out=False) -> BackendResult:
    return BackendResult(stdout, stderr, exit_code, timed_out, wall_time=0.01)


def _artifact(code="def f(x):\n    return x + 1", tests=("assert f(1) == 2",)):
    return GenerationArtifact(code=code, tests=tests, raw_response="", entry_point="f")


# --- classification -----------------------------------------------------------


def test_classify_pass():
    outcome = classify(_result(stdout='{"status": "pass"}\n'))
    assert outcome.klass is OutcomeClass.PASS
    assert outcome.diagnostic == ""
    assert outcome.is_pass


def test_classify_assert_with_index():
    stdout = json.dumps({"status": "assert", "test_index": 2, "message": "AssertionError"})
    outcome = classify(_result(stdout=stdout))
    assert outcome.klass is OutcomeClass.ASSERT_ERROR
    assert outcome.failed_test_index == 2
    assert "AssertionError" in outcome.diagnostic


def test_classify_error_goes_to_syntax_bucket():
    stdout = json.dumps({"status": "error", "message": "SyntaxError: invalid syntax"})
    outcome = classify(_result(stdout=stdout))
    assert outcome.klass is OutcomeClass.SYNTAX_ERROR
    assert "SyntaxError" in outcome.diagnostic


def test_classify_timeout():
    outcome = classify(_result(timed_out=True))
    assert outcome.klass is OutcomeClass.SYNTAX_ERROR
    assert outcome.diagnostic == "timeout"


def test_classify_unparseable_output_uses_raw_text():
    outcome = classify(_result(stdout="Traceback...\n", stderr="boom", exit_code=1))
    assert outcome.klass is OutcomeClass.SYNTAX_ERROR
    assert "Traceback" in outcome.diagnostic


def test_classify_empty_output_mentions_exit_code():
    outcome = classify(_result(stdout="", exit_code=137))
    assert outcome.klass is OutcomeClass.SYNTAX_ERROR
    assert "137" in outcome.diagnostic


def test_classify_uses_last_json_line():
    stdout = 'garbage the candidate printed\n{"status": "pass"}\n'
    assert classify(_result(stdout=stdout)).is_pass


def test_classification_is_total_over_statuses():
    for status in ("pass", "assert", "error", "bizarre"):
        outcome = classify(_result(stdout=json.dumps({"status": status})))
        assert outcome.klass in OutcomeClass


def test_outcome_invariants():
    with pytest.raises(ValueError):
        ExecutionOutcome(OutcomeClass.PASS, diagnostic="something")
    with pytest.raises(ValueError):
        ExecutionOutcome(OutcomeClass.SYNTAX_ERROR, diagnostic="")
    with pytest.raises(ValueError):
        ExecutionOutcome(OutcomeClass.SYNTAX_ERROR, diagnostic="x", failed_test_index=1)


def test_executor_spec_invariants():
    with pytest.raises(ValueError):
        ExecutorSpec(runtime_command=())
    with pytest.raises(ValueError):
        ExecutorSpec(runtime_command=("python3",), time_limit=0)


# --- payload shape ------------------------------------------------------------


def test_run_candidate_payload_and_mapping():
    backend = CallableBackend(lambda payload: _result(stdout='{"status": "pass"}'))
    outcome = run_candidate(FAKE_SPEC, _artifact(), backend)
    assert outcome.is_pass
    payload = backend.payloads[0]
    assert payload["candidate_source"].startswith("def f")
    assert payload["test_statements"] == ["assert f(1) == 2"]
    assert payload["entry_point"] == "f"


def test_run_candidate_requires_tests():
    backend = CallableBackend(lambda payload: _result(stdout='{"status": "pass"}'))
    with pytest.raises(ValueError, match="no tests"):
        run_candidate(FAKE_SPEC, _artifact(tests=()), backend)


def test_assemble_program_prepends_prompt_for_bare_bodies():
    task = make_task(0)
    program = assemble_program(task, task.canonical_solution)
    assert program.startswith("def solve_0")
    assert program.endswith(task.canonical_solution)
    # A full definition is used as-is.
    full = "def solve_0(x):\n    return x + 0\n"
    assert assemble_program(task, full) == full


def test_reference_statement_appends_check_invocation():
    task = make_task(0)
    statement = reference_statement(task)
    assert statement.endswith("check(solve_0)")
    # Already-invoked or assert-style reference tests are untouched.
    from dataclasses import replace

    plain = replace(task, reference_test="assert solve_0(1) == 1")
    assert reference_statement(plain) == "assert solve_0(1) == 1"


def test_run_reference_runs_canonical_solution():
    task = make_task(3)
    backend = CallableBackend(lambda payload: _result(stdout='{"status": "pass"}'))
    outcome = run_reference(FAKE_SPEC, task, task.canonical_solution, backend)
    assert outcome.is_pass
    payload = backend.payloads[0]
    assert "def solve_3" in payload["candidate_source"]
    assert payload["test_statements"][0].endswith("check(solve_3)")


def test_run_reference_rejects_empty_code():
    backend = CallableBackend(lambda payload: _result(stdout='{"status": "pass"}'))
    with pytest.raises(ValueError):
        run_reference(FAKE_SPEC, make_task(0), "   ", backend)


# --- subprocess backend -------------------------------------------------------


def _spec(tmp_path, **kwargs) -> ExecutorSpec:
    return ExecutorSpec(runtime_command=write_fake_runner(tmp_path), **kwargs)


def test_subprocess_backend_round_trip(tmp_path):
    spec = _spec(tmp_path)
    artifact = _artifact(code="def f(x):\n    # STATUS_OK\n    return x + 1")
    outcome = run_candidate(spec, artifact, SubprocessBackend())
    assert outcome.is_pass
    assert outcome.wall_time > 0


def test_subprocess_backend_timeout_kills_within_grace(tmp_path):
    spec = _spec(tmp_path, time_limit=1.0)
    artifact = _artifact(code="def f(x):\n    # SLEEP_FOREVER\n    return x + 1")
    start = time.monotonic()
    outcome = run_candidate(spec, artifact, SubprocessBackend())
    elapsed = time.monotonic() - start
    assert outcome.klass is OutcomeClass.SYNTAX_ERROR
    assert outcome.diagnostic == "timeout"
    assert elapsed < spec.time_limit + 2.0


def test_subprocess_backend_garbage_output(tmp_path):
    spec = _spec(tmp_path)
    artifact = _artifact(code="def f(x):\n    # EMIT_GARBAGE\n    return x + 1")
    outcome = run_candidate(spec, artifact, SubprocessBackend())
    assert outcome.klass is OutcomeClass.SYNTAX_ERROR
    assert "not protocol json" in outcome.diagnostic


def test_missing_runtime_is_backend_unavailable():
    spec = ExecutorSpec(runtime_command=("/nonexistent/interpreter-xyz",))
    with pytest.raises(BackendUnavailableError):
        SubprocessBackend().run(spec, {"candidate_source": "", "test_statements": []})


def test_output_capped_tail_preserving(tmp_path):
    runner = tmp_path / "noisy.py"
    runner.write_text(
        "import sys\nsys.stdin.read()\nprint('x' * 100000)\nprint('THE END')\n",
        encoding="utf-8",
    )
    import sys as _sys

    spec = ExecutorSpec(runtime_command=(_sys.executable, str(runner)), output_cap=1024)
    result = SubprocessBackend().run(spec, {"candidate_source": "", "test_statements": []})
    assert len(result.stdout) <= 1024
    assert result.stdout.rstrip().endswith("THE END")


def test_executor_preflight_reports_broken_runtime(tmp_path):
    bad = tmp_path / "broken.py"
    bad.write_text("import sys; sys.stdin.read(); print('nope')", encoding="utf-8")
    import sys as _sys

    executor = Executor(
        ExecutorSpec(runtime_command=(_sys.executable, str(bad))), SubprocessBackend()
    )
    with pytest.raises(BackendUnavailableError, match="preflight"):
        executor.preflight()


def test_executor_preflight_accepts_fake_runner(tmp_path):
    executor = Executor(_spec(tmp_path), SubprocessBackend())
    executor.preflight()  # fake runner answers pass for the probe
    assert executor.executions == 0  # preflight is not a candidate execution


def test_fresh_temp_cwd_deleted_after_run(tmp_path):
    from pathlib import Path as _Path

    runner = tmp_path / "cwd_runner.py"
    runner.write_text(
        "import json, os, sys\n"
        "sys.stdin.read()\n"
        "open('dropping.txt', 'w').write('x')\n"
        "print(json.dumps({'status': 'error', 'message': os.getcwd()}))\n",
        encoding="utf-8",
    )
    import sys as _sys

    spec = ExecutorSpec(runtime_command=(_sys.executable, str(runner)))
    outcome = run_candidate(spec, _artifact(), SubprocessBackend())
    workdir = _Path(outcome.diagnostic)
    assert workdir.name.startswith("selfexam-run-")
    assert not workdir.exists()  # deleted afterward
    assert workdir != _Path.cwd()  # never the harness directory


def test_executor_counts_runs():
    backend = CallableBackend(lambda payload: _result(stdout='{"status": "pass"}'))
    executor = Executor(FAKE_SPEC, backend)
    executor.run_candidate(_artifact())
    executor.run_reference(make_task(0), "def solve_0(x):\n    return x + 0\n")
    assert executor.executions == 2
