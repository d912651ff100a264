"""Shared fixtures: synthetic tasks, scripted clients, marker backends.

The marker protocol keeps scripted runs stateless and deterministic.  A
scripted response embeds ``TASK_<id>``, ``ATTEMPT_<n>``, ``COT_YES|NO``,
and a ``STATUS_*`` marker in the candidate code; backends decide pass /
assert / error purely from the STATUS marker, and the client derives the
attempt number of a repair request from the prior code quoted in the
prompt.  The same conversation therefore always gets the same response,
no matter how many runs share the client.
"""

from __future__ import annotations

import json
import re
import sys
import textwrap
from pathlib import Path

from selfexam.dataset import Dataset, Task
from selfexam.execution import BackendResult, Executor, ExecutorSpec
from selfexam.llm_client import Cassette, ChatClient, ModelConfig, canonical_request
from selfexam.refine_loop import LoopConfig, run_task

SCRIPTED_CONFIG = ModelConfig(
    endpoint_url="scripted://local",
    model_name="scripted-model",
    temperature=0.0,
    max_tokens=512,
    request_timeout=5.0,
    max_retries=0,
)

COT_MARKER = "step by step"


def make_task(i: int) -> Task:
    entry = f"solve_{i}"
    return Task(
        task_id=f"T{i}",
        prompt=(
            f"def {entry}(x):\n"
            f'    """[task T{i}] Return x + {i}."""\n'
        ),
        entry_point=entry,
        canonical_solution=f"    return x + {i}\n",
        reference_test=(
            "def check(candidate):\n"
            f"    assert candidate(1) == {1 + i}\n"
            f"    assert candidate(0) == {i}\n"
        ),
    )


def make_dataset(n: int, name: str = "synthetic") -> Dataset:
    return Dataset(name=name, tasks=tuple(make_task(i) for i in range(n)))


def scripted_response(task: Task, attempt: int, status: str, cot: bool) -> str:
    """A fenced code + tests response carrying the protocol markers."""
    i = int(task.task_id[1:])
    entry = task.entry_point
    code = (
        f"def {entry}(x):\n"
        f"    # TASK_{task.task_id} ATTEMPT_{attempt} COT_{'YES' if cot else 'NO'} STATUS_{status}\n"
        f"    return x + {i}\n"
    )
    tests = "\n".join(f"assert {entry}({j}) == {j + i}" for j in range(5))
    return f"Here is the solution.\n\n```python\n{code}```\n\nTests:\n\n```python\n{tests}\n```\n"


class MarkerClient(ChatClient):
    """Stateless scripted client.

    ``fix_at[task_id]`` is the attempt at which the code becomes correct;
    ``needs_cot`` tasks are only ever correct when the conversation carries
    the chain-of-thought directive; ``error_style`` tasks emit the
    non-assert failure marker while broken.
    """

    def __init__(
        self,
        tasks,
        fix_at: dict[str, int] | None = None,
        needs_cot: set[str] | frozenset[str] = frozenset(),
        error_style: set[str] | frozenset[str] = frozenset(),
    ) -> None:
        super().__init__(SCRIPTED_CONFIG)
        self.tasks = {t.task_id: t for t in tasks}
        self.fix_at = fix_at or {}
        self.needs_cot = set(needs_cot)
        self.error_style = set(error_style)
        self.calls: list[str] = []

    def _locate(self, text: str) -> Task:
        for task_id, task in self.tasks.items():
            if f"[task {task_id}]" in text:
                return task
        raise AssertionError("conversation references no known task")

    def complete(self, conversation) -> str:
        text = conversation.turns[-1][1]
        task = self._locate(text)
        self.calls.append(task.task_id)
        prior = re.search(r"ATTEMPT_(\d+)", text)
        if prior is not None:
            attempt = int(prior.group(1)) + 1
            cot_flag = re.search(r"COT_(YES|NO)", text)
            cot = cot_flag is not None and cot_flag.group(1) == "YES"
        else:
            attempt = 0
            cot = COT_MARKER in text
        fixed = attempt >= self.fix_at.get(task.task_id, 0)
        if task.task_id in self.needs_cot and not cot:
            fixed = False
        if fixed:
            status = "OK"
        elif task.task_id in self.error_style:
            status = "ERROR"
        else:
            status = "BAD"
        return scripted_response(task, attempt, status, cot)


class QueueClient(ChatClient):
    """Stateful client: per-task response queues, consumed in call order."""

    def __init__(self, responses: dict[str, list[str]], tasks=None) -> None:
        super().__init__(SCRIPTED_CONFIG)
        self.responses = {k: list(v) for k, v in responses.items()}
        self.tasks = {t.task_id: t for t in tasks} if tasks else {}
        self.calls: list[str] = []

    def complete(self, conversation) -> str:
        text = conversation.turns[-1][1]
        for task_id in self.responses:
            if f"[task {task_id}]" in text:
                self.calls.append(task_id)
                queue = self.responses[task_id]
                if not queue:
                    raise AssertionError(f"no scripted response left for {task_id}")
                return queue.pop(0) if len(queue) > 1 else queue[0]
        raise AssertionError("conversation references no known task")


class MarkerBackend:
    """Fake backend: the STATUS marker in the candidate source decides."""

    def __init__(self) -> None:
        self.runs = 0

    def run(self, spec: ExecutorSpec, payload: dict) -> BackendResult:
        self.runs += 1
        source = payload["candidate_source"]
        if "STATUS_OK" in source:
            record: dict = {"status": "pass"}
        elif "STATUS_ERROR" in source:
            record = {"status": "error", "message": "RuntimeError: marker"}
        else:
            record = {"status": "assert", "test_index": 0, "message": "AssertionError: marker"}
        return BackendResult(
            stdout=json.dumps(record) + "\n",
            stderr="",
            exit_code=0,
            timed_out=False,
            wall_time=0.0,
        )


class CallableBackend:
    """Backend whose behaviour is a function of the payload."""

    def __init__(self, fn) -> None:
        self.fn = fn
        self.payloads: list[dict] = []

    def run(self, spec: ExecutorSpec, payload: dict) -> BackendResult:
        self.payloads.append(payload)
        return self.fn(payload)


FAKE_SPEC = ExecutorSpec(runtime_command=("unused-fake-runtime",), time_limit=5.0)


def marker_executor() -> Executor:
    return Executor(FAKE_SPEC, MarkerBackend())


FAKE_RUNNER_SOURCE = textwrap.dedent(
    """\
    import json, sys, time

    payload = json.loads(sys.stdin.read())
    source = payload["candidate_source"]
    if "SLEEP_FOREVER" in source:
        time.sleep(3600)
    if "EMIT_GARBAGE" in source:
        print("this is not protocol json")
        sys.exit(3)
    if "STATUS_ERROR" in source:
        print(json.dumps({"status": "error", "message": "RuntimeError: marker"}))
    elif "STATUS_OK" in source or "_probe" in source:
        print(json.dumps({"status": "pass"}))
    else:
        print(json.dumps({"status": "assert", "test_index": 0,
                          "message": "AssertionError: marker"}))
    """
)


def write_fake_runner(directory: Path) -> tuple[str, ...]:
    """Drop a marker-protocol runner script; returns a runtime command."""
    script = directory / "fake_runner.py"
    script.write_text(FAKE_RUNNER_SOURCE, encoding="utf-8")
    return (sys.executable, str(script))


class _TapedClient(ChatClient):
    """Records every scripted exchange into a cassette."""

    def __init__(self, inner: ChatClient, cassette: Cassette) -> None:
        super().__init__(inner.config)
        self._inner = inner
        self._cassette = cassette

    def complete(self, conversation) -> str:
        response = self._inner.complete(conversation)
        self._cassette.record(
            self.fingerprint(conversation),
            canonical_request(self.config, conversation),
            response,
        )
        return response


def build_marker_cassette(
    path: Path,
    dataset,
    cfgs,
    fix_at: dict[str, int] | None = None,
    needs_cot=frozenset(),
    error_style=frozenset(),
    skip_tasks=frozenset(),
) -> Cassette:
    """Pre-record every conversation the given configs will produce.

    The marker diagnostics baked into ``MarkerBackend`` match the fake
    runner script byte-for-byte, so a CLI run replaying this cassette with
    the fake runner reproduces the same repair conversations.
    """
    cassette = Cassette.open_for_recording(path)
    client = _TapedClient(
        MarkerClient(dataset, fix_at=fix_at, needs_cot=needs_cot, error_style=error_style),
        cassette,
    )
    if isinstance(cfgs, LoopConfig):
        cfgs = [cfgs]
    for cfg in cfgs:
        executor = marker_executor()
        for task in dataset:
            if task.task_id in skip_tasks:
                continue
            run_task(task, cfg, client, executor if cfg.uses_self_exam else None)
    return cassette
