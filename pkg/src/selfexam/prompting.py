"""Build every conversation sent to the model.

Two prompt families exist: the generation prompt (task description, a
guiding worked example, and the instruction to emit code plus a fixed
number of test assertions) and the repair prompt (prior code plus the
captured error feedback).  Templates are plain-text files with
``{{placeholder}}`` markers, shipped as versioned package data; an
alternative set can be loaded from any directory.

Rendering is pure: identical inputs produce byte-identical conversations.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import TYPE_CHECKING, Mapping

from .errors import TemplateError

if TYPE_CHECKING:  # pragma: no cover
    from .dataset import Task
    from .refine_loop import TraceStep
    from .response_parser import GenerationArtifact

ALLOWED_PLACEHOLDERS = frozenset(
    {
        "task_prompt",
        "entry_point",
        "guiding_example",
        "prior_code",
        "prior_tests",
        "error_feedback",
        "num_tests",
    }
)

ROLES = ("system", "user", "assistant")

#: Diagnostics longer than this are truncated tail-first before they enter a
#: repair prompt; the error type and line number sit at the end of a traceback.
DEFAULT_FEEDBACK_CAP = 2000

TRUNCATION_MARKER = "[earlier output truncated]\n"


@dataclass(frozen=True)
class Conversation:
    """An ordered list of (role, content) chat turns."""

    turns: tuple[tuple[str, str], ...]

    def __post_init__(self) -> None:
        if not self.turns:
            raise ValueError("conversation must have at least one turn")
        for role, _ in self.turns:
            if role not in ROLES:
                raise ValueError(f"invalid role {role!r}")
        if self.turns[0][0] not in ("system", "user"):
            raise ValueError("first turn must be system or user")

    def as_messages(self) -> list[dict[str, str]]:
        return [{"role": role, "content": content} for role, content in self.turns]


@dataclass(frozen=True)
class PromptTemplate:
    """A parsed template: ordered literal and placeholder segments.

    Segments are ``("lit", text)`` or ``("ph", name)`` pairs.
    """

    name: str
    segments: tuple[tuple[str, str], ...]

    @classmethod
    def parse(cls, name: str, text: str) -> "PromptTemplate":
        segments: list[tuple[str, str]] = []
        rest = text
        while rest:
            start = rest.find("{{")
            if start < 0:
                segments.append(("lit", rest))
                break
            end = rest.find("}}", start)
            if end < 0:
                raise TemplateError(f"template {name!r}: unterminated placeholder")
            if start:
                segments.append(("lit", rest[:start]))
            ph = rest[start + 2 : end].strip()
            if ph not in ALLOWED_PLACEHOLDERS:
                raise TemplateError(f"template {name!r}: unknown placeholder {ph!r}")
            segments.append(("ph", ph))
            rest = rest[end + 2 :]
        return cls(name=name, segments=tuple(segments))

    def placeholders(self) -> frozenset[str]:
        return frozenset(name for kind, name in self.segments if kind == "ph")

    def render(self, bindings: Mapping[str, str]) -> str:
        parts: list[str] = []
        for kind, value in self.segments:
            if kind == "lit":
                parts.append(value)
            else:
                if value not in bindings:
                    raise TemplateError(
                        f"template {self.name!r}: placeholder {value!r} is unbound"
                    )
                parts.append(bindings[value])
        return "".join(parts)


_REQUIRED_TEMPLATES = (
    "system",
    "generation_cot",
    "generation_plain",
    "guiding_example_cot",
    "guiding_example_plain",
    "repair",
    "repair_refine_tests",
)


@dataclass(frozen=True)
class TemplateSet:
    """All templates of one named set plus a content hash for manifests."""

    templates: Mapping[str, PromptTemplate]
    sha256: str
    source: str

    def __getitem__(self, name: str) -> PromptTemplate:
        return self.templates[name]

    @classmethod
    def from_texts(cls, texts: Mapping[str, str], source: str) -> "TemplateSet":
        missing = [name for name in _REQUIRED_TEMPLATES if name not in texts]
        if missing:
            raise TemplateError(f"template set {source!r} is missing {missing}")
        digest = hashlib.sha256()
        for name in sorted(texts):
            digest.update(name.encode("utf-8") + b"\0")
            digest.update(texts[name].encode("utf-8") + b"\0")
        templates = {name: PromptTemplate.parse(name, text) for name, text in texts.items()}
        return cls(templates=templates, sha256=digest.hexdigest(), source=source)

    @classmethod
    def load(cls, directory: str | Path) -> "TemplateSet":
        directory = Path(directory)
        if not directory.is_dir():
            raise TemplateError(f"template directory not found: {directory}")
        texts = {
            p.stem: p.read_text(encoding="utf-8") for p in sorted(directory.glob("*.txt"))
        }
        return cls.from_texts(texts, source=str(directory))


@lru_cache(maxsize=1)
def default_templates() -> TemplateSet:
    root = resources.files("selfexam").joinpath("templates/default")
    texts = {
        name: root.joinpath(f"{name}.txt").read_text(encoding="utf-8")
        for name in _REQUIRED_TEMPLATES
    }
    return TemplateSet.from_texts(texts, source="default")


def truncate_tail(text: str, cap: int = DEFAULT_FEEDBACK_CAP) -> str:
    """Keep the final ``cap`` characters of ``text``, cutting at a line
    boundary where possible.  Text at or below the cap is returned verbatim."""
    if cap < 1:
        raise ValueError("cap must be positive")
    if len(text) <= cap:
        return text
    tail = text[-cap:]
    newline = tail.find("\n")
    if 0 <= newline < len(tail) - 1:
        tail = tail[newline + 1 :]
    return TRUNCATION_MARKER + tail


def build_generation_prompt(
    task: "Task",
    mode: str = "cot",
    num_tests: int = 5,
    templates: TemplateSet | None = None,
) -> Conversation:
    """Build the code + test co-generation conversation.

    ``mode="cot"`` adds the step-by-step reasoning instruction and the
    reasoned worked example; ``mode="plain"`` keeps the worked example but
    drops every reasoning directive.  Both instruct the model to emit
    exactly ``num_tests`` assert statements for the task's entry point.
    """
    if num_tests < 1:
        raise ValueError(f"num_tests must be >= 1, got {num_tests}")
    if mode not in ("cot", "plain"):
        raise ValueError(f"unknown prompt mode {mode!r}")
    ts = templates or default_templates()
    example = ts[f"guiding_example_{mode}"].render({})
    user = ts[f"generation_{mode}"].render(
        {
            "task_prompt": task.prompt,
            "entry_point": task.entry_point,
            "guiding_example": example,
            "num_tests": str(num_tests),
        }
    )
    return Conversation(turns=(("system", ts["system"].render({})), ("user", user)))


def build_repair_prompt(
    task: "Task",
    trace_tail: "TraceStep",
    refine_tests: bool = False,
    templates: TemplateSet | None = None,
    fallback_artifact: "GenerationArtifact | None" = None,
    feedback_cap: int = DEFAULT_FEEDBACK_CAP,
) -> Conversation:
    """Build the repair conversation from the last refinement step.

    The prompt embeds the prior candidate code and the captured error
    feedback verbatim (tail-truncated above ``feedback_cap``).  With
    ``refine_tests`` the prior tests are included and the model is told to
    correct them too; otherwise it must keep tests fixed and return only
    revised code.  ``fallback_artifact`` supplies the prior code when the
    tail step itself holds no artifact (a parse failure).
    """
    outcome = trace_tail.outcome
    if outcome is not None and outcome.is_pass:
        raise ValueError("cannot build a repair prompt for a passing step")
    if outcome is not None:
        feedback = outcome.diagnostic
    elif trace_tail.parse_error is not None:
        feedback = trace_tail.parse_error
    else:
        raise ValueError("trace step carries neither an outcome nor a parse error")

    artifact = trace_tail.artifact or fallback_artifact
    bindings = {
        "task_prompt": task.prompt,
        "entry_point": task.entry_point,
        "prior_code": artifact.code if artifact else "",
        "prior_tests": "\n".join(artifact.tests) if artifact else "",
        "error_feedback": truncate_tail(feedback, feedback_cap),
    }
    ts = templates or default_templates()
    template = ts["repair_refine_tests" if refine_tests else "repair"]
    user = template.render(bindings)
    return Conversation(turns=(("system", ts["system"].render({})), ("user", user)))
