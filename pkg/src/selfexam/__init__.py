"""Code generation harness with self-generated tests, sandboxed
self-examination loops, and pass@k evaluation."""

__version__ = "0.1.0"

from .dataset import Dataset, Task, load_dataset, save_dataset
from .evaluator import EvalReport, TaskResult, pass_at_k, score_run, sweep_steps, validate_tests
from .execution import ExecutionOutcome, Executor, ExecutorSpec, OutcomeClass, SubprocessBackend
from .llm_client import Cassette, ChatClient, LiveClient, ModelConfig, RecordingClient, ReplayClient
from .prompting import Conversation, TemplateSet, build_generation_prompt, build_repair_prompt
from .refine_loop import LoopConfig, RefinementTrace, TraceStep, run_task
from .response_parser import GenerationArtifact, parse_generation, parse_repair

__all__ = [
    "Cassette",
    "ChatClient",
    "Conversation",
    "Dataset",
    "EvalReport",
    "ExecutionOutcome",
    "Executor",
    "ExecutorSpec",
    "GenerationArtifact",
    "LiveClient",
    "LoopConfig",
    "ModelConfig",
    "OutcomeClass",
    "RecordingClient",
    "RefinementTrace",
    "ReplayClient",
    "SubprocessBackend",
    "Task",
    "TaskResult",
    "TemplateSet",
    "TraceStep",
    "build_generation_prompt",
    "build_repair_prompt",
    "load_dataset",
    "parse_generation",
    "parse_repair",
    "pass_at_k",
    "run_task",
    "save_dataset",
    "score_run",
    "sweep_steps",
    "validate_tests",
]
