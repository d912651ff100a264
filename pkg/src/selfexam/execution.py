"""Run candidate code against tests in an isolated subprocess and classify
the result into the two-bucket failure taxonomy.

The runner protocol: the child process receives one JSON payload
``{candidate_source, test_statements, entry_point}`` on stdin and must
print exactly one JSON object ``{status: "pass"|"assert"|"error",
test_index?, message?}`` on stdout.  Assertion-class failures map to
``AssertError``; every other non-pass result (syntax errors, import
errors, timeouts, crashes, protocol violations) lands in the
``SyntaxError`` bucket.

Each run gets a fresh process and a fresh temporary working directory,
deleted afterward.  A wall-clock limit kills runaway candidates.  The
backend is injectable so the test suite runs with fakes and no runtime
dependency on the real runner script.

Generated code is untrusted: the subprocess boundary confines accidental
damage (working directory, interpreter state) but is not an OS-level
sandbox.  Do not point this at adversarial code on a machine you care
about.
"""

from __future__ import annotations

import json
import os
import re
import subprocess
import tempfile
import threading
import time
from dataclasses import dataclass
from enum import Enum
from typing import TYPE_CHECKING, Protocol

from .errors import BackendUnavailableError

if TYPE_CHECKING:  # pragma: no cover
    from .dataset import Task
    from .response_parser import GenerationArtifact

DEFAULT_TIME_LIMIT = 10.0
DEFAULT_OUTPUT_CAP = 64 * 1024


class OutcomeClass(str, Enum):
    """Execution taxonomy: pass, assertion failure, or everything else."""

    PASS = "Pass"
    ASSERT_ERROR = "AssertError"
    SYNTAX_ERROR = "SyntaxError"


@dataclass(frozen=True)
class ExecutionOutcome:
    """Classified result of one sandboxed run."""

    klass: OutcomeClass
    diagnostic: str = ""
    failed_test_index: int | None = None
    wall_time: float = 0.0

    def __post_init__(self) -> None:
        if (self.klass is OutcomeClass.PASS) != (self.diagnostic == ""):
            raise ValueError("diagnostic must be empty exactly when the run passed")
        if self.failed_test_index is not None and self.klass is not OutcomeClass.ASSERT_ERROR:
            raise ValueError("failed_test_index is only meaningful for assertion failures")

    @property
    def is_pass(self) -> bool:
        return self.klass is OutcomeClass.PASS


@dataclass(frozen=True)
class ExecutorSpec:
    """How to invoke the benchmark runtime, plus resource limits."""

    runtime_command: tuple[str, ...]
    time_limit: float = DEFAULT_TIME_LIMIT
    output_cap: int = DEFAULT_OUTPUT_CAP

    def __post_init__(self) -> None:
        if not self.runtime_command:
            raise ValueError("runtime_command must be non-empty")
        if self.time_limit <= 0:
            raise ValueError("time_limit must be positive")
        if self.output_cap < 1:
            raise ValueError("output_cap must be positive")


@dataclass(frozen=True)
class BackendResult:
    """Raw transport-level result of one child process run."""

    stdout: str
    stderr: str
    exit_code: int | None
    timed_out: bool
    wall_time: float


class ExecutionBackend(Protocol):
    def run(self, spec: ExecutorSpec, payload: dict) -> BackendResult: ...


def _tail(text: str, cap: int) -> str:
    return text if len(text) <= cap else text[-cap:]


class SubprocessBackend:
    """Real backend: one fresh child process per run, temp dir as cwd.

    Concurrent calls are throttled by a semaphore (default: CPU count);
    there is no other shared mutable state.
    """

    def __init__(self, max_parallel: int | None = None) -> None:
        self._semaphore = threading.BoundedSemaphore(max_parallel or os.cpu_count() or 1)

    def run(self, spec: ExecutorSpec, payload: dict) -> BackendResult:
        with self._semaphore:
            with tempfile.TemporaryDirectory(prefix="selfexam-run-") as workdir:
                start = time.perf_counter()
                try:
                    process = subprocess.Popen(
                        list(spec.runtime_command),
                        stdin=subprocess.PIPE,
                        stdout=subprocess.PIPE,
                        stderr=subprocess.PIPE,
                        cwd=workdir,
                        text=True,
                    )
                except (FileNotFoundError, PermissionError, NotADirectoryError) as exc:
                    raise BackendUnavailableError(
                        f"cannot start runtime {spec.runtime_command!r}: {exc}"
                    ) from exc
                timed_out = False
                try:
                    stdout, stderr = process.communicate(
                        json.dumps(payload), timeout=spec.time_limit
                    )
                except subprocess.TimeoutExpired:
                    timed_out = True
                    process.kill()
                    stdout, stderr = process.communicate()
                wall = time.perf_counter() - start
                return BackendResult(
                    stdout=_tail(stdout or "", spec.output_cap),
                    stderr=_tail(stderr or "", spec.output_cap),
                    exit_code=process.returncode,
                    timed_out=timed_out,
                    wall_time=wall,
                )


def classify(result: BackendResult) -> ExecutionOutcome:
    """Map a raw backend result onto the outcome taxonomy.

    Total: every result yields exactly one class.  A timeout or any output
    that is not the expected protocol JSON goes to the SyntaxError bucket.
    """
    if result.timed_out:
        return ExecutionOutcome(
            OutcomeClass.SYNTAX_ERROR, diagnostic="timeout", wall_time=result.wall_time
        )
    line = ""
    for candidate_line in reversed(result.stdout.splitlines()):
        if candidate_line.strip():
            line = candidate_line
            break
    try:
        record = json.loads(line)
        status = record["status"]
    except (json.JSONDecodeError, KeyError, TypeError):
        raw = (result.stdout + result.stderr).strip() or f"exit code {result.exit_code}"
        return ExecutionOutcome(
            OutcomeClass.SYNTAX_ERROR, diagnostic=raw, wall_time=result.wall_time
        )
    if status == "pass":
        return ExecutionOutcome(OutcomeClass.PASS, wall_time=result.wall_time)
    if status == "assert":
        index = record.get("test_index")
        return ExecutionOutcome(
            OutcomeClass.ASSERT_ERROR,
            diagnostic=record.get("message") or "AssertionError",
            failed_test_index=index if isinstance(index, int) else None,
            wall_time=result.wall_time,
        )
    if status == "error":
        return ExecutionOutcome(
            OutcomeClass.SYNTAX_ERROR,
            diagnostic=record.get("message") or "error",
            wall_time=result.wall_time,
        )
    return ExecutionOutcome(
        OutcomeClass.SYNTAX_ERROR,
        diagnostic=f"unknown runner status {status!r}",
        wall_time=result.wall_time,
    )


def run_candidate(
    spec: ExecutorSpec, artifact: "GenerationArtifact", backend: ExecutionBackend
) -> ExecutionOutcome:
    """Execute a candidate against its self-generated tests.

    Tests run in payload order and the runner stops at the first failure,
    so one diagnostic comes back per run.
    """
    if not artifact.tests:
        raise ValueError("artifact has no tests to run")
    payload = {
        "candidate_source": artifact.code,
        "test_statements": list(artifact.tests),
        "entry_point": artifact.entry_point,
    }
    return classify(backend.run(spec, payload))


def _defines_entry_point(code: str, entry_point: str) -> bool:
    return bool(
        re.search(rf"(?m)^[ \t]*(?:async[ \t]+)?def[ \t]+{re.escape(entry_point)}[ \t]*\(", code)
    )


def assemble_program(task: "Task", code: str) -> str:
    """Make ``code`` a standalone program defining the entry point.

    Model output is a complete definition and is used as-is; a bare
    completion body (such as the dataset's canonical solution) is appended
    to the task prompt, which carries the signature.
    """
    if _defines_entry_point(code, task.entry_point):
        return code
    prompt = task.prompt if task.prompt.endswith("\n") else task.prompt + "\n"
    return prompt + code


def reference_statement(task: "Task") -> str:
    """The reference test as one self-contained statement.

    Check-style programs (``def check(candidate): ...``) that never invoke
    ``check`` get the invocation appended; plain assert scripts run as-is.
    """
    text = task.reference_test
    defines_check = re.search(r"(?m)^def[ \t]+check[ \t]*\(", text)
    invokes_check = re.search(r"(?m)^check[ \t]*\(", text)
    if defines_check and not invokes_check:
        return text + f"\n\ncheck({task.entry_point})"
    return text


def run_reference(
    spec: ExecutorSpec, task: "Task", code: str, backend: ExecutionBackend
) -> ExecutionOutcome:
    """Execute candidate code against the task's hidden reference test."""
    if not code.strip():
        raise ValueError("candidate code must be non-empty")
    payload = {
        "candidate_source": assemble_program(task, code),
        "test_statements": [reference_statement(task)],
        "entry_point": task.entry_point,
    }
    return classify(backend.run(spec, payload))


PREFLIGHT_PAYLOAD = {
    "candidate_source": "def _probe(x):\n    return x + 1\n",
    "test_statements": ["assert _probe(1) == 2"],
    "entry_point": "_probe",
}


class Executor:
    """An ExecutorSpec bound to a backend, with a run counter for reports."""

    def __init__(self, spec: ExecutorSpec, backend: ExecutionBackend) -> None:
        self.spec = spec
        self.backend = backend
        self._count = 0
        self._lock = threading.Lock()

    @property
    def executions(self) -> int:
        return self._count

    def _bump(self) -> None:
        with self._lock:
            self._count += 1

    def run_candidate(self, artifact: "GenerationArtifact") -> ExecutionOutcome:
        self._bump()
        return run_candidate(self.spec, artifact, self.backend)

    def run_reference(self, task: "Task", code: str) -> ExecutionOutcome:
        self._bump()
        return run_reference(self.spec, task, code, self.backend)

    def run_tests_against(self, task: "Task", code: str, tests: tuple[str, ...]) -> ExecutionOutcome:
        """Run arbitrary test statements against a program built from ``code``
        (used for generated-test validity checks on canonical solutions)."""
        if not tests:
            raise ValueError("no test statements given")
        self._bump()
        payload = {
            "candidate_source": assemble_program(task, code),
            "test_statements": list(tests),
            "entry_point": task.entry_point,
        }
        return classify(self.backend.run(self.spec, payload))

    def preflight(self) -> None:
        """Run a trivial payload; raise BackendUnavailableError if the
        runtime is missing or does not speak the protocol."""
        try:
            outcome = classify(self.backend.run(self.spec, dict(PREFLIGHT_PAYLOAD)))
        except BackendUnavailableError:
            raise
        if not outcome.is_pass:
            raise BackendUnavailableError(
                f"runtime {self.spec.runtime_command!r} failed the preflight probe: "
                f"{outcome.diagnostic[:200]}"
            )
