"""Score refinement traces against hidden reference tests.

Final codes run against the reference tests (never the self-generated
ones); per-task pass counts feed the unbiased pass@k estimator.  The
error-type distribution is taken over failing tasks only, using the
reference run's classification: assertion failures in one bucket, every
other non-pass outcome in the SyntaxError bucket.  Generated-test validity
executes each task's final tests against the canonical solution.
"""

from __future__ import annotations

import dataclasses
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Sequence

from .errors import EvaluationError
from .execution import ExecutionOutcome, Executor, OutcomeClass
from .prompting import TemplateSet
from .refine_loop import LoopConfig, RefinementTrace, run_task

if TYPE_CHECKING:  # pragma: no cover
    from .dataset import Dataset, Task
    from .llm_client import ChatClient

#: k values reported when the sample count allows them.
DEFAULT_KS = (1, 2, 5, 10, 100)

#: Reference-run stand-in for traces that never produced any code; such
#: tasks count as failures in the non-assert bucket.
NO_CODE_OUTCOME = ExecutionOutcome(
    OutcomeClass.SYNTAX_ERROR, diagnostic="no candidate code produced"
)


def pass_at_k(n: int, c: int, k: int) -> float:
    """Unbiased pass@k: the probability that at least one of k samples
    drawn without replacement from n (c of them correct) is correct.

    Computed in the numerically stable product form of
    ``1 - C(n-c, k) / C(n, k)``.
    """
    if not 0 <= c <= n:
        raise ValueError(f"need 0 <= c <= n, got c={c}, n={n}")
    if not 1 <= k <= n:
        raise ValueError(f"need 1 <= k <= n, got k={k}, n={n}")
    if n - c < k:
        return 1.0
    result = 1.0
    for j in range(n - c + 1, n + 1):
        result *= 1.0 - k / j
    return 1.0 - result


@dataclass(frozen=True)
class TaskResult:
    """Reference-scored summary of one task's samples."""

    task_id: str
    n_samples: int
    n_correct: int
    final_outcome_class: OutcomeClass  # reference run of the first sample
    tests_valid: bool | None = None

    def __post_init__(self) -> None:
        if not 0 <= self.n_correct <= self.n_samples:
            raise ValueError("need 0 <= n_correct <= n_samples")


@dataclass(frozen=True)
class SweepRow:
    """One scored run at a fixed repair budget."""

    max_steps: int
    pass_at_1: float
    n_tasks: int
    n_correct: int
    error_distribution: dict[str, float]


@dataclass
class EvalReport:
    """Aggregate metrics for one run."""

    dataset_name: str
    model_name: str
    cfg: dict
    n_tasks: int
    pass_at_k: dict[int, float]
    error_counts: dict[str, int]  # over failing tasks; exact integer partition
    task_results: list[TaskResult]
    dataset_sha256: str | None = None
    test_validity_rate: float | None = None
    per_step_rows: list[SweepRow] | None = None
    n_errored: int = 0
    extra: dict = field(default_factory=dict)

    @property
    def n_failing(self) -> int:
        return sum(self.error_counts.values())

    @property
    def error_distribution(self) -> dict[str, float]:
        """Bucket fractions over failing tasks; zero-valued when nothing fails."""
        failing = self.n_failing
        if failing == 0:
            return {OutcomeClass.ASSERT_ERROR.value: 0.0, OutcomeClass.SYNTAX_ERROR.value: 0.0}
        return {name: count / failing for name, count in self.error_counts.items()}

    def as_dict(self) -> dict:
        return {
            "dataset_name": self.dataset_name,
            "dataset_sha256": self.dataset_sha256,
            "model_name": self.model_name,
            "cfg": self.cfg,
            "n_tasks": self.n_tasks,
            "n_errored": self.n_errored,
            "pass_at_k": {str(k): v for k, v in self.pass_at_k.items()},
            "error_counts": self.error_counts,
            "error_distribution": self.error_distribution,
            "test_validity_rate": self.test_validity_rate,
            "per_step_rows": [dataclasses.asdict(r) for r in self.per_step_rows]
            if self.per_step_rows is not None
            else None,
            "task_results": [
                {
                    "task_id": r.task_id,
                    "n_samples": r.n_samples,
                    "n_correct": r.n_correct,
                    "final_outcome_class": r.final_outcome_class.value,
                    "tests_valid": r.tests_valid,
                }
                for r in self.task_results
            ],
            "extra": self.extra,
        }


def _group_by_task(
    traces: Sequence[RefinementTrace], dataset: "Dataset"
) -> dict[str, list[int]]:
    """Map task_id to the positions of its samples, in file order."""
    by_id = dataset.by_id
    grouped: dict[str, list[int]] = {}
    for index, trace in enumerate(traces):
        if trace.task_id not in by_id:
            raise EvaluationError(f"trace references unknown task_id {trace.task_id!r}")
        grouped.setdefault(trace.task_id, []).append(index)
    return grouped


def _reference_outcomes(
    traces: Sequence[RefinementTrace], dataset: "Dataset", executor: Executor, jobs: int
) -> list[ExecutionOutcome]:
    by_id = dataset.by_id

    def score(trace: RefinementTrace) -> ExecutionOutcome:
        if not trace.final_code.strip():
            return NO_CODE_OUTCOME
        return executor.run_reference(by_id[trace.task_id], trace.final_code)

    if jobs <= 1:
        return [score(t) for t in traces]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(score, traces))


def score_run(
    traces: Sequence[RefinementTrace],
    dataset: "Dataset",
    executor: Executor,
    jobs: int = 1,
    model_name: str = "",
    cfg: dict | None = None,
) -> EvalReport:
    """Run the hidden reference tests over every trace and aggregate.

    Multiple traces sharing a task_id are treated as independent samples
    of that task, enabling pass@k for k > 1.
    """
    if not traces:
        raise EvaluationError("empty run: no traces to score")
    grouped = _group_by_task(traces, dataset)
    outcomes = _reference_outcomes(traces, dataset, executor, jobs)

    task_results: list[TaskResult] = []
    error_counts = {OutcomeClass.ASSERT_ERROR.value: 0, OutcomeClass.SYNTAX_ERROR.value: 0}
    for task_id, indices in grouped.items():
        classes = [outcomes[i].klass for i in indices]
        first = classes[0]
        result = TaskResult(
            task_id=task_id,
            n_samples=len(classes),
            n_correct=sum(1 for k in classes if k is OutcomeClass.PASS),
            final_outcome_class=first,
        )
        task_results.append(result)
        if first is not OutcomeClass.PASS:
            error_counts[first.value] += 1

    min_n = min(r.n_samples for r in task_results)
    ks = [k for k in DEFAULT_KS if k <= min_n]
    pass_rates = {
        k: sum(pass_at_k(r.n_samples, r.n_correct, k) for r in task_results) / len(task_results)
        for k in ks
    }
    return EvalReport(
        dataset_name=dataset.name,
        dataset_sha256=dataset.source_sha256,
        model_name=model_name,
        cfg=cfg or {},
        n_tasks=len(task_results),
        pass_at_k=pass_rates,
        error_counts=error_counts,
        task_results=task_results,
    )


def validate_tests(
    traces: Sequence[RefinementTrace],
    dataset: "Dataset",
    executor: Executor,
    jobs: int = 1,
) -> tuple[dict[str, bool], float]:
    """Check each task's final generated tests against the canonical solution.

    A task's tests are valid iff the run passes; tasks whose traces carry
    no tests count as invalid.  Returns per-task flags and the aggregate
    valid-task fraction.  Uses the first sample of each task.
    """
    if not traces:
        raise EvaluationError("empty run: no traces to validate")
    grouped = _group_by_task(traces, dataset)
    by_id = dataset.by_id

    def check(item: tuple[str, list[int]]) -> tuple[str, bool]:
        task_id, indices = item
        tests = traces[indices[0]].final_tests
        if not tests:
            return task_id, False
        task = by_id[task_id]
        outcome = executor.run_tests_against(task, task.canonical_solution, tests)
        return task_id, outcome.is_pass

    items = list(grouped.items())
    if jobs <= 1:
        flags = dict(check(item) for item in items)
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            flags = dict(pool.map(check, items))
    rate = sum(flags.values()) / len(flags)
    return flags, rate


def sweep_steps(
    dataset: "Dataset",
    cfg: LoopConfig,
    steps: Sequence[int],
    client: "ChatClient",
    executor: Executor,
    templates: TemplateSet | None = None,
    jobs: int = 1,
) -> list[SweepRow]:
    """One full scored run per repair-budget value, sharing the client.

    With a cassette-backed client every run beyond the largest budget's
    recording replays prefixes of the same conversations, so sweeps are
    cheap and deterministic offline.
    """
    if not steps:
        raise EvaluationError("steps sweep needs at least one value")
    if list(steps) != sorted(set(steps)):
        raise EvaluationError("steps must be strictly ascending")
    if any(s < 0 for s in steps):
        raise EvaluationError("steps must be >= 0")

    rows: list[SweepRow] = []
    for max_steps in steps:
        run_cfg = dataclasses.replace(cfg, max_steps=max_steps)

        def run_one(task: "Task") -> RefinementTrace:
            return run_task(task, run_cfg, client, executor, templates)

        if jobs <= 1:
            traces = [run_one(task) for task in dataset]
        else:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                traces = list(pool.map(run_one, dataset))
        report = score_run(traces, dataset, executor, jobs=jobs, model_name=client.model_name)
        rows.append(
            SweepRow(
                max_steps=max_steps,
                pass_at_1=report.pass_at_k[1],
                n_tasks=report.n_tasks,
                n_correct=sum(r.n_correct for r in report.task_results),
                error_distribution=report.error_distribution,
            )
        )
    return rows
