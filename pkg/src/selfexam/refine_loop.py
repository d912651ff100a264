"""The generate / self-test / repair state machine for one task.

Step 0 is the initial generation.  In the self-examination modes the
candidate then runs against its own generated tests; while the outcome is
not a pass and repair budget remains, the last code and the captured error
feedback go back to the model and the revised candidate is re-executed.
The plain ``coder`` / ``coder_cot`` modes stop after the initial
generation with no execution at all.

Mode semantics:

========== =============== ====================
mode        CoT prompt      self-examination
========== =============== ====================
coder           no               no
coder_cot       yes              no
coder_selfexam  no               yes
codecot         yes              yes
========== =============== ====================

One task's loop is strictly sequential; distinct tasks can run in
parallel because the loop owns no shared mutable state.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .errors import ParseError
from .execution import ExecutionOutcome, Executor, OutcomeClass
from .prompting import TemplateSet, build_generation_prompt, build_repair_prompt
from .response_parser import GenerationArtifact, parse_generation, parse_repair

if TYPE_CHECKING:  # pragma: no cover
    from .dataset import Task
    from .llm_client import ChatClient

MODES = ("coder", "coder_cot", "coder_selfexam", "codecot")
COT_MODES = frozenset({"coder_cot", "codecot"})
SELF_EXAM_MODES = frozenset({"coder_selfexam", "codecot"})

ALL_TESTS_PASSED = "AllTestsPassed"
STEP_BUDGET_EXHAUSTED = "StepBudgetExhausted"
PARSE_FAILURE = "ParseFailure"


@dataclass(frozen=True)
class LoopConfig:
    """Refinement budget and pipeline composition for one run."""

    max_steps: int = 5  # repair iterations after the initial generation
    mode: str = "codecot"
    refine_tests: bool = False
    num_tests: int = 5

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise ValueError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.max_steps < 0:
            raise ValueError("max_steps must be >= 0")
        if self.num_tests < 1:
            raise ValueError("num_tests must be >= 1")
        if self.refine_tests and not self.uses_self_exam:
            raise ValueError("refine_tests requires a self-examination mode")

    @property
    def uses_cot(self) -> bool:
        return self.mode in COT_MODES

    @property
    def uses_self_exam(self) -> bool:
        return self.mode in SELF_EXAM_MODES

    def as_dict(self) -> dict:
        return {
            "max_steps": self.max_steps,
            "mode": self.mode,
            "refine_tests": self.refine_tests,
            "num_tests": self.num_tests,
        }


@dataclass(frozen=True)
class TraceStep:
    """One model call: its fingerprint, what it parsed to, how it ran.

    Exactly one of ``artifact`` / ``parse_error`` is set; ``outcome`` is
    absent when nothing was executed (plain modes, parse failures, empty
    test lists).
    """

    fingerprint: str
    artifact: GenerationArtifact | None = None
    parse_error: str | None = None
    outcome: ExecutionOutcome | None = None

    def __post_init__(self) -> None:
        if (self.artifact is None) == (self.parse_error is None):
            raise ValueError("a step holds either an artifact or a parse error")


@dataclass(frozen=True)
class RefinementTrace:
    """Complete per-task record of the loop, in step order."""

    task_id: str
    steps: tuple[TraceStep, ...]
    final_code: str
    terminated_by: str

    def __post_init__(self) -> None:
        if self.terminated_by not in (ALL_TESTS_PASSED, STEP_BUDGET_EXHAUSTED, PARSE_FAILURE):
            raise ValueError(f"unknown termination reason {self.terminated_by!r}")

    @property
    def final_artifact(self) -> GenerationArtifact | None:
        for step in reversed(self.steps):
            if step.artifact is not None:
                return step.artifact
        return None

    @property
    def final_tests(self) -> tuple[str, ...]:
        artifact = self.final_artifact
        return artifact.tests if artifact else ()

    @property
    def candidate_executions(self) -> int:
        return sum(1 for step in self.steps if step.outcome is not None)


def run_task(
    task: "Task",
    cfg: LoopConfig,
    client: "ChatClient",
    executor: Executor | None = None,
    templates: TemplateSet | None = None,
) -> RefinementTrace:
    """Run the full loop for one task and return its trace.

    Parse failures consume a repair step: the parser's complaint is fed
    back as error feedback, up to the budget.  After a pass no further
    client calls or executions happen.
    """
    if cfg.uses_self_exam and executor is None:
        raise ValueError(f"mode {cfg.mode!r} requires an executor")

    prompt_mode = "cot" if cfg.uses_cot else "plain"
    conversation = build_generation_prompt(task, prompt_mode, cfg.num_tests, templates)
    fingerprint = client.fingerprint(conversation)
    artifact, parse_error = _parse(
        client.complete(conversation), task.entry_point, None, cfg, is_repair=False
    )

    if not cfg.uses_self_exam:
        step = TraceStep(fingerprint, artifact=artifact, parse_error=parse_error)
        return RefinementTrace(
            task_id=task.task_id,
            steps=(step,),
            final_code=artifact.code if artifact else "",
            terminated_by=PARSE_FAILURE if artifact is None else STEP_BUDGET_EXHAUSTED,
        )

    steps: list[TraceStep] = []
    last_artifact = artifact
    outcome = _maybe_execute(artifact, executor)
    steps.append(TraceStep(fingerprint, artifact=artifact, parse_error=parse_error, outcome=outcome))

    repairs = 0
    while (
        repairs < cfg.max_steps
        and not (outcome is not None and outcome.is_pass)
        and not _stuck_without_tests(steps[-1])
    ):
        conversation = build_repair_prompt(
            task,
            steps[-1],
            refine_tests=cfg.refine_tests,
            templates=templates,
            fallback_artifact=last_artifact,
        )
        fingerprint = client.fingerprint(conversation)
        response = client.complete(conversation)
        repairs += 1
        artifact, parse_error = _parse(
            response, task.entry_point, last_artifact, cfg, is_repair=True
        )
        if artifact is not None:
            last_artifact = artifact
        outcome = _maybe_execute(artifact, executor)
        steps.append(
            TraceStep(fingerprint, artifact=artifact, parse_error=parse_error, outcome=outcome)
        )

    if outcome is not None and outcome.is_pass:
        terminated_by = ALL_TESTS_PASSED
    elif steps[-1].parse_error is not None:
        terminated_by = PARSE_FAILURE
    else:
        terminated_by = STEP_BUDGET_EXHAUSTED
    return RefinementTrace(
        task_id=task.task_id,
        steps=tuple(steps),
        final_code=last_artifact.code if last_artifact else "",
        terminated_by=terminated_by,
    )


def _parse(
    response: str,
    entry_point: str,
    prior: GenerationArtifact | None,
    cfg: LoopConfig,
    is_repair: bool,
) -> tuple[GenerationArtifact | None, str | None]:
    try:
        if is_repair:
            artifact = parse_repair(response, entry_point, prior, cfg.refine_tests)
        else:
            artifact = parse_generation(response, entry_point)
        return artifact, None
    except ParseError as exc:
        return None, str(exc)


def _maybe_execute(
    artifact: GenerationArtifact | None, executor: Executor | None
) -> ExecutionOutcome | None:
    # The loop is driven entirely by self-generated tests; with none there
    # is nothing to execute and the task parks until the budget rule ends it.
    if artifact is None or executor is None or not artifact.tests:
        return None
    return executor.run_candidate(artifact)


def _stuck_without_tests(step: TraceStep) -> bool:
    return step.artifact is not None and not step.artifact.tests


# ---------------------------------------------------------------------------
# Trace persistence: one JSON object per task in a run-results file.
# ---------------------------------------------------------------------------


def _artifact_to_dict(artifact: GenerationArtifact | None) -> dict | None:
    if artifact is None:
        return None
    return {
        "code": artifact.code,
        "tests": list(artifact.tests),
        "raw_response": artifact.raw_response,
        "entry_point": artifact.entry_point,
    }


def _outcome_to_dict(outcome: ExecutionOutcome | None) -> dict | None:
    if outcome is None:
        return None
    # wall_time is deliberately dropped: persisted traces must be
    # byte-reproducible from a manifest plus cassette.
    return {
        "klass": outcome.klass.value,
        "diagnostic": outcome.diagnostic,
        "failed_test_index": outcome.failed_test_index,
    }


def trace_to_record(trace: RefinementTrace, cfg: LoopConfig, model_name: str) -> dict:
    return {
        "task_id": trace.task_id,
        "model_name": model_name,
        "cfg": cfg.as_dict(),
        "steps": [
            {
                "fingerprint": step.fingerprint,
                "artifact": _artifact_to_dict(step.artifact),
                "parse_error": step.parse_error,
                "outcome": _outcome_to_dict(step.outcome),
            }
            for step in trace.steps
        ],
        "final_code": trace.final_code,
        "final_tests": list(trace.final_tests),
        "terminated_by": trace.terminated_by,
    }


def record_to_trace(record: dict) -> RefinementTrace:
    steps = []
    for raw in record["steps"]:
        artifact = None
        if raw.get("artifact") is not None:
            a = raw["artifact"]
            artifact = GenerationArtifact(
                code=a["code"],
                tests=tuple(a["tests"]),
                raw_response=a.get("raw_response", ""),
                entry_point=a["entry_point"],
            )
        outcome = None
        if raw.get("outcome") is not None:
            o = raw["outcome"]
            outcome = ExecutionOutcome(
                klass=OutcomeClass(o["klass"]),
                diagnostic=o["diagnostic"],
                failed_test_index=o.get("failed_test_index"),
            )
        steps.append(
            TraceStep(
                fingerprint=raw["fingerprint"],
                artifact=artifact,
                parse_error=raw.get("parse_error"),
                outcome=outcome,
            )
        )
    return RefinementTrace(
        task_id=record["task_id"],
        steps=tuple(steps),
        final_code=record["final_code"],
        terminated_by=record["terminated_by"],
    )


def dump_record(record: dict) -> str:
    """Canonical single-line serialization used for run-results files."""
    return json.dumps(record, sort_keys=True, ensure_ascii=True, separators=(",", ":"))
