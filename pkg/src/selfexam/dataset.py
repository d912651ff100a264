"""Ingest HumanEval/MBPP-format task collections from line-delimited JSON.

Field mappings
--------------
humaneval: ``task_id``, ``prompt``, ``entry_point``, ``canonical_solution``,
``test`` -> ``reference_test``.

mbpp: ``task_id`` (integer, stringified), ``text`` -> prompt source,
``code`` -> ``canonical_solution``, ``test_list`` (newline-joined) ->
``reference_test``, ``entry_point`` = name of the first function defined in
``code``.  MBPP records carry no docstring-style prompt, so the model-facing
prompt is synthesized as the problem text plus the first reference test,
which reveals the required function name and call signature.

Unknown extra JSON fields are preserved on the task (``extras``) but never
interpreted.  Loaded datasets are immutable and safe to share across worker
threads.
"""

from __future__ import annotations

import ast
import hashlib
import json
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Mapping

from .errors import DatasetError

FORMATS = ("humaneval", "mbpp")

_HUMANEVAL_FIELDS = ("task_id", "prompt", "entry_point", "canonical_solution", "test")
_MBPP_FIELDS = ("task_id", "text", "code", "test_list")

_MBPP_PROMPT = (
    "{text}\n\n"
    "Write a Python function named `{entry_point}` that solves the task.\n"
    "It must satisfy this example test:\n"
    "{first_test}\n"
)


@dataclass(frozen=True)
class Task:
    """One benchmark problem.

    ``reference_test`` is the hidden check program used only for final
    scoring; it is never shown to the model.
    """

    task_id: str
    prompt: str
    entry_point: str
    canonical_solution: str
    reference_test: str
    extras: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.task_id:
            raise DatasetError("task_id must be non-empty")
        for name in ("prompt", "entry_point", "canonical_solution", "reference_test"):
            if not getattr(self, name):
                raise DatasetError(f"task {self.task_id!r}: {name} must be non-empty")
        if not re.search(rf"\b{re.escape(self.entry_point)}\b", self.prompt):
            raise DatasetError(
                f"task {self.task_id!r}: entry point {self.entry_point!r} "
                "does not occur in the prompt"
            )


@dataclass(frozen=True)
class Dataset:
    """An ordered, duplicate-free collection of tasks."""

    name: str
    tasks: tuple[Task, ...]
    source_sha256: str | None = field(default=None, compare=False)

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for task in self.tasks:
            if task.task_id in seen:
                raise DatasetError(f"duplicate task_id {task.task_id!r}")
            seen.add(task.task_id)

    def __iter__(self) -> Iterator[Task]:
        return iter(self.tasks)

    def __len__(self) -> int:
        return len(self.tasks)

    def get(self, task_id: str) -> Task:
        for task in self.tasks:
            if task.task_id == task_id:
                return task
        raise KeyError(task_id)

    @property
    def by_id(self) -> dict[str, Task]:
        return {task.task_id: task for task in self.tasks}


def _require(record: dict, fields: tuple[str, ...], where: str) -> None:
    for name in fields:
        if name not in record:
            raise DatasetError(f"{where}: missing required field {name!r}")


def _first_function_name(code: str, where: str) -> str:
    try:
        tree = ast.parse(code)
    except SyntaxError as exc:
        raise DatasetError(f"{where}: cannot parse code field: {exc}") from exc
    for node in tree.body:
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            return node.name
    for node in ast.walk(tree):
        if isinstance(node, (ast.FunctionDef, ast.AsyncFunctionDef)):
            return node.name
    raise DatasetError(f"{where}: code field defines no function")


def _task_from_humaneval(record: dict, where: str) -> Task:
    _require(record, _HUMANEVAL_FIELDS, where)
    extras = {k: v for k, v in record.items() if k not in _HUMANEVAL_FIELDS}
    return Task(
        task_id=str(record["task_id"]),
        prompt=record["prompt"],
        entry_point=record["entry_point"],
        canonical_solution=record["canonical_solution"],
        reference_test=record["test"],
        extras=extras,
    )


def _task_from_mbpp(record: dict, where: str) -> Task:
    _require(record, _MBPP_FIELDS, where)
    test_list = record["test_list"]
    if not isinstance(test_list, list) or not test_list:
        raise DatasetError(f"{where}: test_list must be a non-empty list")
    entry_point = _first_function_name(record["code"], where)
    prompt = _MBPP_PROMPT.format(
        text=str(record["text"]).strip(),
        entry_point=entry_point,
        first_test=str(test_list[0]).strip(),
    )
    extras = {k: v for k, v in record.items() if k not in _MBPP_FIELDS}
    return Task(
        task_id=str(record["task_id"]),
        prompt=prompt,
        entry_point=entry_point,
        canonical_solution=record["code"],
        reference_test="\n".join(str(t) for t in test_list),
        extras=extras,
    )


_MAPPERS = {"humaneval": _task_from_humaneval, "mbpp": _task_from_mbpp}


def load_dataset(path: str | Path, format: str = "humaneval", name: str | None = None) -> Dataset:
    """Load a line-delimited JSON task file.

    Every line must be a self-contained JSON object.  Whitespace-only lines
    are skipped.  Errors name the offending line number.
    """
    if format not in _MAPPERS:
        raise DatasetError(f"unknown dataset format {format!r}; expected one of {FORMATS}")
    path = Path(path)
    if not path.is_file():
        raise DatasetError(f"dataset file not found: {path}")
    data = path.read_bytes()
    digest = hashlib.sha256(data).hexdigest()

    tasks: list[Task] = []
    seen: set[str] = set()
    mapper = _MAPPERS[format]
    for lineno, line in enumerate(data.decode("utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        where = f"{path.name}:{lineno}"
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise DatasetError(f"{where}: malformed JSON: {exc}") from exc
        if not isinstance(record, dict):
            raise DatasetError(f"{where}: expected a JSON object")
        task = mapper(record, where)
        if task.task_id in seen:
            raise DatasetError(f"{where}: duplicate task_id {task.task_id!r}")
        seen.add(task.task_id)
        tasks.append(task)
    return Dataset(name=name or path.stem, tasks=tuple(tasks), source_sha256=digest)


def save_dataset(dataset: Dataset, path: str | Path) -> None:
    """Write a dataset back out as humaneval-format line-delimited JSON.

    Reloading the result with ``format="humaneval"`` yields an equal dataset.
    Extra fields are carried along; extras that collide with the canonical
    field names are dropped.
    """
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for task in dataset.tasks:
            record = {k: v for k, v in task.extras.items() if k not in _HUMANEVAL_FIELDS}
            record.update(
                task_id=task.task_id,
                prompt=task.prompt,
                entry_point=task.entry_point,
                canonical_solution=task.canonical_solution,
                test=task.reference_test,
            )
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=True) + "\n")
