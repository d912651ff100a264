"""Command-line interface: ``selfexam run | eval | ablate``.

``run`` executes the generate/self-test/repair loop over a dataset and
appends one JSON trace per task to ``<out>/traces.jsonl``, in dataset
order, flushing incrementally.  Reruns skip already-completed task ids, so
interrupted runs resume.  A manifest capturing every input that determines
the results is written before the first client call; a results file is
reproducible byte-for-byte from its manifest plus cassette.

``eval`` scores a traces file against the hidden reference tests and
renders the report (text table to stdout; JSON, CSV, and figures under
``--out``).  ``ablate`` runs and scores each requested pipeline mode and
prints the comparison table.

Exit codes: 0 success, 1 usage error, 2 environment error (runtime
unavailable, missing cassette), 3 partial run (some tasks errored).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import shlex
import sys
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Sequence

from . import __version__
from .dataset import FORMATS, Dataset, load_dataset
from .errors import (
    BackendUnavailableError,
    DatasetError,
    EvaluationError,
    ReplayMissError,
    SelfExamError,
    TemplateError,
    TransportError,
)
from .evaluator import EvalReport, score_run, sweep_steps, validate_tests
from .execution import Executor, ExecutorSpec, SubprocessBackend
from .llm_client import (
    Cassette,
    ChatClient,
    LiveClient,
    ModelConfig,
    RecordingClient,
    ReplayClient,
)
from .prompting import TemplateSet, default_templates
from .refine_loop import (
    MODES,
    LoopConfig,
    dump_record,
    record_to_trace,
    run_task,
    trace_to_record,
)
from .report import (
    format_ablation_text,
    format_report_text,
    render_ablation_figure,
    write_ablation_csv,
    write_report_bundle,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_ENV = 2
EXIT_PARTIAL = 3

DEFAULT_ENDPOINT = "https://api.openai.com/v1/chat/completions"
DEFAULT_MODEL = "gpt-3.5-turbo"


class UsageError(SelfExamError):
    """Bad flags or inconsistent inputs; maps to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # noqa: D102 - argparse hook
        raise UsageError(message)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--model", default=None, help=f"model name (default {DEFAULT_MODEL})")
    p.add_argument("--endpoint", default=None, help="chat-completions URL")
    p.add_argument("--temperature", type=float, default=None, help="sampling temperature (default 0)")
    p.add_argument("--max-tokens", type=int, default=None)
    p.add_argument("--request-timeout", type=float, default=None)
    p.add_argument("--max-retries", type=int, default=None)
    p.add_argument("--rate-limit", type=float, default=None, help="requests per second (default 2)")


def _add_client_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--client", choices=("live", "record", "replay"), default=None)
    p.add_argument("--cassette", default=None, help="cassette file for record/replay modes")


def _add_loop_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--mode", choices=MODES, default=None)
    p.add_argument("--max-steps", type=int, default=None, help="repair iterations (default 5)")
    p.add_argument("--num-tests", type=int, default=None, help="generated tests per task (default 5)")
    p.add_argument(
        "--refine-tests",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="let repair steps rewrite the generated tests too",
    )


def _add_exec_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument(
        "--runtime",
        default=None,
        help="command that runs the sandbox runner (default: '<python> -m selfexam_shim')",
    )
    p.add_argument("--time-limit", type=float, default=None, help="seconds per execution (default 10)")
    p.add_argument("--jobs", type=int, default=None, help="concurrent task workers (default 1)")


def _add_data_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--dataset", default=None, help="line-delimited JSON task file")
    p.add_argument("--format", choices=FORMATS, default=None)
    p.add_argument("--templates", default=None, help="directory with an alternative template set")


def build_parser() -> _Parser:
    parser = _Parser(prog="selfexam", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="generate, self-test, and repair over a dataset")
    _add_data_flags(p_run)
    _add_model_flags(p_run)
    _add_client_flags(p_run)
    _add_loop_flags(p_run)
    _add_exec_flags(p_run)
    p_run.add_argument("--out", default=None, help="output directory (manifest + traces)")
    p_run.add_argument("--samples", type=int, default=None, help="traces per task (default 1)")
    p_run.add_argument("--from-manifest", default=None, help="load settings from a manifest.json")
    p_run.set_defaults(func=cmd_run)

    p_eval = sub.add_parser("eval", help="score a traces file against reference tests")
    p_eval.add_argument("--traces", required=True, help="traces.jsonl from a run")
    _add_data_flags(p_eval)
    _add_model_flags(p_eval)
    _add_client_flags(p_eval)
    _add_exec_flags(p_eval)
    p_eval.add_argument("--out", default=None, help="directory for report.json/CSVs/figures")
    p_eval.add_argument(
        "--validity",
        action=argparse.BooleanOptionalAction,
        default=True,
        help="check generated tests against canonical solutions",
    )
    p_eval.add_argument(
        "--figures", action=argparse.BooleanOptionalAction, default=True,
        help="render figures under --out",
    )
    p_eval.add_argument(
        "--steps-sweep",
        default=None,
        help="comma-separated repair budgets to re-run and score (needs a client)",
    )
    p_eval.add_argument("--from-manifest", default=None, help="reuse a run's client settings")
    p_eval.set_defaults(func=cmd_eval)

    p_ablate = sub.add_parser("ablate", help="run and score several pipeline modes")
    _add_data_flags(p_ablate)
    _add_model_flags(p_ablate)
    _add_client_flags(p_ablate)
    _add_loop_flags(p_ablate)
    _add_exec_flags(p_ablate)
    p_ablate.add_argument("--modes", default=None, help="comma-separated subset of modes")
    p_ablate.add_argument("--out", default=None, help="output directory (per-mode traces + table)")
    p_ablate.add_argument("--samples", type=int, default=None)
    p_ablate.add_argument("--from-manifest", default=None)
    p_ablate.set_defaults(func=cmd_ablate)
    return parser


# ---------------------------------------------------------------------------
# Settings resolution: flag > manifest > built-in default.
# ---------------------------------------------------------------------------


def _load_manifest(path: str | None) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"manifest not found: {p}")
    return json.loads(p.read_text(encoding="utf-8"))


def _pick(flag, *fallbacks):
    for value in (flag, *fallbacks):
        if value is not None:
            return value
    return None


class Settings:
    """Fully resolved configuration for one command invocation."""

    def __init__(self, args: argparse.Namespace) -> None:
        manifest = _load_manifest(getattr(args, "from_manifest", None))
        m_model = manifest.get("model", {})
        m_loop = manifest.get("loop", {})
        m_exec = manifest.get("executor", {})
        m_data = manifest.get("dataset", {})

        self.dataset_path = _pick(args.dataset, m_data.get("path"))
        self.format = _pick(args.format, m_data.get("format"), "humaneval")
        self.templates_dir = _pick(args.templates, manifest.get("templates", {}).get("directory"))

        self.model = ModelConfig(
            endpoint_url=_pick(getattr(args, "endpoint", None), m_model.get("endpoint_url"), DEFAULT_ENDPOINT),
            model_name=_pick(getattr(args, "model", None), m_model.get("model_name"), DEFAULT_MODEL),
            temperature=_pick(getattr(args, "temperature", None), m_model.get("temperature"), 0.0),
            max_tokens=_pick(getattr(args, "max_tokens", None), m_model.get("max_tokens"), 2048),
            request_timeout=_pick(
                getattr(args, "request_timeout", None), m_model.get("request_timeout"), 120.0
            ),
            max_retries=_pick(getattr(args, "max_retries", None), m_model.get("max_retries"), 3),
        )
        self.rate_limit = _pick(getattr(args, "rate_limit", None), manifest.get("rate_limit"), 2.0)

        self.loop = LoopConfig(
            max_steps=_pick(getattr(args, "max_steps", None), m_loop.get("max_steps"), 5),
            mode=_pick(getattr(args, "mode", None), m_loop.get("mode"), "codecot"),
            refine_tests=_pick(getattr(args, "refine_tests", None), m_loop.get("refine_tests"), False),
            num_tests=_pick(getattr(args, "num_tests", None), m_loop.get("num_tests"), 5),
        )

        runtime = _pick(getattr(args, "runtime", None), m_exec.get("runtime"))
        if runtime is None:
            command = (sys.executable, "-m", "selfexam_shim")
        else:
            command = tuple(shlex.split(runtime))
        self.executor_spec = ExecutorSpec(
            runtime_command=command,
            time_limit=_pick(getattr(args, "time_limit", None), m_exec.get("time_limit"), 10.0),
        )

        self.client_mode = _pick(getattr(args, "client", None), manifest.get("client_mode"), "live")
        self.cassette_path = _pick(getattr(args, "cassette", None), manifest.get("cassette"))
        self.samples = _pick(getattr(args, "samples", None), manifest.get("samples"), 1)
        self.jobs = _pick(getattr(args, "jobs", None), manifest.get("jobs"), 1)
        self.manifest_out_dir = manifest.get("out_dir")
        if self.samples < 1:
            raise UsageError("--samples must be >= 1")
        if self.jobs < 1:
            raise UsageError("--jobs must be >= 1")

    def load_templates(self) -> TemplateSet:
        if self.templates_dir:
            return TemplateSet.load(self.templates_dir)
        return default_templates()

    def load_dataset(self) -> Dataset:
        if not self.dataset_path:
            raise UsageError("--dataset is required")
        return load_dataset(self.dataset_path, self.format)

    def build_client(self) -> ChatClient:
        if self.client_mode == "live":
            return LiveClient(self.model, rate_limit=self.rate_limit)
        if not self.cassette_path:
            raise UsageError(f"--cassette is required for --client {self.client_mode}")
        if self.client_mode == "replay":
            cassette_file = Path(self.cassette_path)
            if not cassette_file.is_file():
                raise BackendUnavailableError(f"cassette file not found: {cassette_file}")
            return ReplayClient(self.model, Cassette.load(cassette_file))
        cassette = Cassette.open_for_recording(self.cassette_path)
        return RecordingClient(LiveClient(self.model, rate_limit=self.rate_limit), cassette)

    def build_executor(self) -> Executor:
        return Executor(self.executor_spec, SubprocessBackend())


def build_manifest(settings: Settings, dataset: Dataset, templates: TemplateSet, out_dir: Path) -> dict:
    core = {
        "dataset_sha256": dataset.source_sha256,
        "format": settings.format,
        "model": {
            "endpoint_url": settings.model.endpoint_url,
            "model_name": settings.model.model_name,
            "temperature": settings.model.temperature,
            "max_tokens": settings.model.max_tokens,
        },
        "loop": settings.loop.as_dict(),
        "templates_sha256": templates.sha256,
        "client_mode": settings.client_mode,
        "samples": settings.samples,
    }
    run_id = hashlib.sha256(
        json.dumps(core, sort_keys=True, ensure_ascii=True, separators=(",", ":")).encode()
    ).hexdigest()[:16]
    return {
        "run_id": run_id,
        "created_at": datetime.now(timezone.utc).isoformat(),
        "package_version": __version__,
        "dataset": {
            "path": str(settings.dataset_path),
            "sha256": dataset.source_sha256,
            "format": settings.format,
            "n_tasks": len(dataset),
        },
        "model": {
            "endpoint_url": settings.model.endpoint_url,
            "model_name": settings.model.model_name,
            "temperature": settings.model.temperature,
            "max_tokens": settings.model.max_tokens,
            "request_timeout": settings.model.request_timeout,
            "max_retries": settings.model.max_retries,
        },
        "rate_limit": settings.rate_limit,
        "loop": settings.loop.as_dict(),
        "executor": {
            "runtime": shlex.join(settings.executor_spec.runtime_command),
            "time_limit": settings.executor_spec.time_limit,
        },
        "client_mode": settings.client_mode,
        "cassette": str(settings.cassette_path) if settings.cassette_path else None,
        "samples": settings.samples,
        "jobs": settings.jobs,
        "templates": {
            "directory": settings.templates_dir,
            "sha256": templates.sha256,
        },
        "out_dir": str(out_dir),
    }


# ---------------------------------------------------------------------------
# run
# ---------------------------------------------------------------------------


def _read_existing_records(traces_path: Path) -> tuple[list[str], Counter]:
    """Valid existing lines and per-task completion counts (for resume)."""
    lines: list[str] = []
    done: Counter = Counter()
    if not traces_path.exists():
        return lines, done
    for raw in traces_path.read_text(encoding="utf-8").splitlines():
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
            task_id = record["task_id"]
        except (json.JSONDecodeError, KeyError, TypeError):
            continue  # partial line from an interrupted write; dropped on rewrite
        lines.append(raw)
        done[task_id] += 1
    return lines, done


def run_dataset(
    dataset: Dataset,
    cfg: LoopConfig,
    client: ChatClient,
    executor: Executor | None,
    traces_path: Path,
    templates: TemplateSet | None = None,
    jobs: int = 1,
    samples: int = 1,
) -> tuple[int, int]:
    """Run every pending (task, sample) pair, appending traces in dataset
    order.  Returns (records written, records errored)."""
    existing, done = _read_existing_records(traces_path)
    current = traces_path.read_text(encoding="utf-8") if traces_path.exists() else ""
    valid = "".join(line + "\n" for line in existing)
    if current != valid:
        traces_path.write_text(valid, encoding="utf-8")

    plan = [
        task
        for task in dataset
        for sample_index in range(samples)
        if sample_index >= done[task.task_id]
    ]

    def work(task) -> tuple[str, bool]:
        try:
            trace = run_task(task, cfg, client, executor, templates)
            return dump_record(trace_to_record(trace, cfg, client.model_name)), True
        except BackendUnavailableError:
            raise
        except Exception as exc:  # per-task failure; the run continues
            record = {"task_id": task.task_id, "error": f"{type(exc).__name__}: {exc}"}
            return dump_record(record), False

    written = errored = 0
    pool = ThreadPoolExecutor(max_workers=jobs)
    try:
        futures = [pool.submit(work, task) for task in plan]
        with traces_path.open("a", encoding="utf-8") as fh:
            for future in futures:
                line, ok = future.result()
                fh.write(line + "\n")
                fh.flush()
                written += 1
                errored += 0 if ok else 1
    except BaseException:
        pool.shutdown(wait=False, cancel_futures=True)
        raise
    pool.shutdown(wait=True)
    return written, errored


def cmd_run(args: argparse.Namespace) -> int:
    settings = Settings(args)
    out_value = _pick(getattr(args, "out", None), settings.manifest_out_dir)
    if out_value is None:
        raise UsageError("--out is required for run")
    out_dir = Path(out_value)
    dataset = settings.load_dataset()
    templates = settings.load_templates()

    client = settings.build_client()  # fails fast on a missing cassette
    executor = None
    if settings.loop.uses_self_exam:
        executor = settings.build_executor()
        executor.preflight()

    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = build_manifest(settings, dataset, templates, out_dir)
    manifest_path = out_dir / "manifest.json"
    if manifest_path.exists():
        previous = json.loads(manifest_path.read_text(encoding="utf-8"))
        if previous.get("run_id") != manifest["run_id"]:
            raise UsageError(
                f"{manifest_path} belongs to run {previous.get('run_id')}; "
                "refusing to mix configurations in one output directory"
            )
    manifest_path.write_text(
        json.dumps(manifest, indent=2, sort_keys=True, ensure_ascii=True) + "\n",
        encoding="utf-8",
    )

    written, errored = run_dataset(
        dataset,
        settings.loop,
        client,
        executor,
        out_dir / "traces.jsonl",
        templates=templates,
        jobs=settings.jobs,
        samples=settings.samples,
    )
    total = len(dataset) * settings.samples
    print(f"run {manifest['run_id']}: {written} new records, {total} total, {errored} errored")
    print(f"traces: {out_dir / 'traces.jsonl'}")
    return EXIT_PARTIAL if errored else EXIT_OK


# ---------------------------------------------------------------------------
# eval
# ---------------------------------------------------------------------------


def _read_traces_file(path: Path) -> tuple[list, int, dict, str]:
    """Returns (traces, n_errored, cfg snapshot, model name)."""
    if not path.is_file():
        raise UsageError(f"traces file not found: {path}")
    traces = []
    n_errored = 0
    cfg: dict = {}
    model_name = ""
    for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not raw.strip():
            continue
        try:
            record = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}:{lineno}: malformed trace line: {exc}") from exc
        if "error" in record:
            n_errored += 1
            continue
        traces.append(record_to_trace(record))
        cfg = cfg or record.get("cfg", {})
        model_name = model_name or record.get("model_name", "")
    return traces, n_errored, cfg, model_name


def _parse_steps(raw: str) -> list[int]:
    try:
        steps = [int(part) for part in raw.split(",") if part.strip()]
    except ValueError as exc:
        raise UsageError(f"bad --steps-sweep value {raw!r}") from exc
    if not steps:
        raise UsageError("--steps-sweep needs at least one step value")
    return steps


def cmd_eval(args: argparse.Namespace) -> int:
    settings = Settings(args)
    traces, n_errored, cfg, model_name = _read_traces_file(Path(args.traces))
    if not traces:
        raise EvaluationError("empty run: no traces to score")
    dataset = settings.load_dataset()
    executor = settings.build_executor()
    executor.preflight()

    report = score_run(
        traces, dataset, executor, jobs=settings.jobs, model_name=model_name, cfg=cfg
    )
    report.n_errored = n_errored

    if args.validity:
        flags, rate = validate_tests(traces, dataset, executor, jobs=settings.jobs)
        report.test_validity_rate = rate
        report.task_results = [
            replace(r, tests_valid=flags.get(r.task_id)) for r in report.task_results
        ]

    if args.steps_sweep:
        steps = _parse_steps(args.steps_sweep)
        sweep_cfg = LoopConfig(
            max_steps=max(steps),
            mode=cfg.get("mode", settings.loop.mode),
            refine_tests=cfg.get("refine_tests", False),
            num_tests=cfg.get("num_tests", 5),
        )
        client = settings.build_client()
        report.per_step_rows = sweep_steps(
            dataset,
            sweep_cfg,
            steps,
            client,
            executor,
            templates=settings.load_templates(),
            jobs=settings.jobs,
        )

    print(format_report_text(report), end="")
    if args.out:
        files = write_report_bundle(report, Path(args.out), figures=args.figures)
        print(f"wrote {len(files)} files under {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# ablate
# ---------------------------------------------------------------------------


def run_ablation(
    dataset: Dataset,
    base_cfg: LoopConfig,
    modes: Sequence[str],
    client: ChatClient,
    executor: Executor,
    templates: TemplateSet | None = None,
    jobs: int = 1,
    samples: int = 1,
    out_dir: Path | None = None,
) -> list[dict]:
    """One run plus one evaluation per mode; rows for the comparison table."""
    if not modes:
        raise UsageError("ablation needs at least one mode")
    unknown = [m for m in modes if m not in MODES]
    if unknown:
        raise UsageError(f"unknown modes {unknown}; choose from {MODES}")

    rows: list[dict] = []
    for mode in modes:
        cfg = replace(base_cfg, mode=mode, refine_tests=base_cfg.refine_tests and mode in ("coder_selfexam", "codecot"))
        traces = []
        def run_one(task):
            return run_task(task, cfg, client, executor if cfg.uses_self_exam else None, templates)
        if jobs <= 1:
            for task in dataset:
                for _ in range(samples):
                    traces.append(run_one(task))
        else:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                traces = list(pool.map(run_one, [t for t in dataset for _ in range(samples)]))
        if out_dir is not None:
            mode_dir = out_dir / mode
            mode_dir.mkdir(parents=True, exist_ok=True)
            with (mode_dir / "traces.jsonl").open("w", encoding="utf-8") as fh:
                for trace in traces:
                    fh.write(dump_record(trace_to_record(trace, cfg, client.model_name)) + "\n")
        report = score_run(
            traces, dataset, executor, jobs=jobs, model_name=client.model_name, cfg=cfg.as_dict()
        )
        rows.append(
            {
                "mode": mode,
                "pass_at_1": report.pass_at_k[1],
                "error_distribution": report.error_distribution,
                "candidate_executions": sum(t.candidate_executions for t in traces),
                "n_tasks": report.n_tasks,
            }
        )
    return rows


def cmd_ablate(args: argparse.Namespace) -> int:
    settings = Settings(args)
    if not args.modes:
        raise UsageError("--modes is required for ablate")
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    if not modes:
        raise UsageError("--modes is required for ablate")
    unknown = [m for m in modes if m not in MODES]
    if unknown:
        raise UsageError(f"unknown modes {unknown}; choose from {MODES}")
    dataset = settings.load_dataset()
    templates = settings.load_templates()
    client = settings.build_client()
    executor = settings.build_executor()
    executor.preflight()

    out_dir = Path(args.out) if args.out else None
    rows = run_ablation(
        dataset,
        settings.loop,
        modes,
        client,
        executor,
        templates=templates,
        jobs=settings.jobs,
        samples=settings.samples,
        out_dir=out_dir,
    )
    print(format_ablation_text(rows))
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        write_ablation_csv(rows, out_dir / "ablation.csv")
        fig_dir = out_dir / "figures"
        fig_dir.mkdir(exist_ok=True)
        render_ablation_figure(rows, fig_dir / "ablation.png")
        print(f"wrote {out_dir / 'ablation.csv'} and {fig_dir / 'ablation.png'}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (BackendUnavailableError, ReplayMissError, TransportError) as exc:
        print(f"environment error: {exc}", file=sys.stderr)
        return EXIT_ENV
    except (DatasetError, TemplateError, EvaluationError, SelfExamError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
