"""Extract candidate code and generated test assertions from model output.

Extraction contract
-------------------
Fenced blocks (``` with an optional language tag, optionally indented) are
located first; an unterminated final fence extends to the end of the text.
When no fences exist, a bare top-level ``def`` is accepted as a fallback:
the code region runs from that definition (including any contiguous
imports, decorators, or comments directly above it) to the end of the
response.

Blocks that define the entry point are implementation candidates; when the
model restates its implementation, the last such block wins.  Test
statements are collected from the chosen implementation block and from
every non-implementation block:

* a top-level single-line ``assert`` that references the entry point;
* a top-level ``def test*``/``def check`` function whose body asserts on
  the entry point, kept whole as one statement.  A top-level call to that
  function is attached to the statement; if the response never calls it,
  the call is synthesized (passing the entry point when the function takes
  parameters) so the statement is self-contained.

Extracted lines are removed from the code, so code and tests partition the
block.  Interior whitespace is preserved exactly; only leading and trailing
blank lines are trimmed.  Nothing here executes any extracted text.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace

from .errors import EntryPointMissingError, NoCodeBlockError

_FENCE_RE = re.compile(r"^[ \t]*```")
_TOP_DEF_RE = re.compile(r"^(?:async[ \t]+)?def[ \t]+(\w+)[ \t]*\(([^)]*)")
_TEST_DEF_NAME_RE = re.compile(r"^(?:test\w*|check)$")
_ASSERT_RE = re.compile(r"^assert\b")
_BARE_DEF_RE = re.compile(r"(?m)^(?:async[ \t]+)?def[ \t]+\w+[ \t]*\(")
_PREAMBLE_RE = re.compile(r"^(?:import\s|from\s|@|#|class\s)")


@dataclass(frozen=True)
class GenerationArtifact:
    """Parsed model output: candidate code plus generated test statements."""

    code: str
    tests: tuple[str, ...]
    raw_response: str
    entry_point: str

    def __post_init__(self) -> None:
        if not self.code.strip():
            raise ValueError("artifact code must be non-empty")
        ref = re.compile(rf"\b{re.escape(self.entry_point)}\b")
        for statement in self.tests:
            if not ref.search(statement):
                raise ValueError(
                    f"test statement does not reference {self.entry_point!r}: {statement!r}"
                )


def _fenced_blocks(text: str) -> list[str]:
    blocks: list[str] = []
    current: list[str] | None = None
    for line in text.split("\n"):
        if _FENCE_RE.match(line):
            if current is None:
                current = []
            else:
                blocks.append("\n".join(current))
                current = None
        elif current is not None:
            current.append(line)
    if current is not None:
        blocks.append("\n".join(current))
    return blocks


def _bare_region(text: str) -> str | None:
    match = _BARE_DEF_RE.search(text)
    if match is None:
        return None
    lines = text.split("\n")
    start = text.count("\n", 0, match.start())
    k = start - 1
    while k >= 0:
        line = lines[k]
        if not line.strip() or _PREAMBLE_RE.match(line):
            start = k
            k -= 1
        else:
            break
    return "\n".join(lines[start:])


def _defines(block: str, entry_point: str) -> bool:
    return bool(
        re.search(rf"(?m)^[ \t]*(?:async[ \t]+)?def[ \t]+{re.escape(entry_point)}[ \t]*\(", block)
    )


def _trim_blank_edges(lines: list[str]) -> str:
    start, end = 0, len(lines)
    while start < end and not lines[start].strip():
        start += 1
    while end > start and not lines[end - 1].strip():
        end -= 1
    return "\n".join(lines[start:end])


def _split_block(block: str, entry_point: str) -> tuple[str, list[str]]:
    """Separate one block into (code, test statements) per the contract."""
    ref = re.compile(rf"\b{re.escape(entry_point)}\b")
    lines = block.split("\n")
    kept: list[str] = []
    tests: list[str] = []
    pending: dict[str, int] = {}  # unresolved test-function name -> index in tests
    takes_args: dict[str, bool] = {}
    i = 0
    while i < len(lines):
        line = lines[i]
        stripped = line.strip()
        if line[:1] in (" ", "\t") or not stripped:
            kept.append(line)
            i += 1
            continue
        def_match = _TOP_DEF_RE.match(line)
        if (
            def_match
            and _TEST_DEF_NAME_RE.match(def_match.group(1))
            and def_match.group(1) != entry_point
        ):
            j = i + 1
            while j < len(lines) and (not lines[j].strip() or lines[j][:1] in (" ", "\t")):
                j += 1
            body = "\n".join(lines[i:j]).rstrip("\n")
            if re.search(r"\bassert\b", body) and ref.search(body):
                name = def_match.group(1)
                pending[name] = len(tests)
                takes_args[name] = bool(def_match.group(2).strip())
                tests.append(body)
            else:
                kept.extend(lines[i:j])
            i = j
            continue
        call_match = re.match(r"^(\w+)[ \t]*\(", stripped)
        if call_match and call_match.group(1) in pending:
            index = pending.pop(call_match.group(1))
            tests[index] = tests[index] + "\n" + stripped
            i += 1
            continue
        if _ASSERT_RE.match(stripped) and ref.search(stripped):
            tests.append(stripped)
            i += 1
            continue
        kept.append(line)
        i += 1
    for name, index in pending.items():
        call = f"{name}({entry_point})" if takes_args[name] else f"{name}()"
        tests[index] = tests[index] + "\n" + call
    return _trim_blank_edges(kept), tests


def parse_generation(response: str, entry_point: str) -> GenerationArtifact:
    """Parse a generation response into code plus test statements.

    Raises ``NoCodeBlockError`` when neither a fenced block nor a bare
    definition exists, and ``EntryPointMissingError`` when code was found
    but none of it defines ``entry_point``.
    """
    if not response:
        raise ValueError("response must be non-empty")
    blocks = _fenced_blocks(response)
    if not blocks:
        region = _bare_region(response)
        if region is None:
            raise NoCodeBlockError(
                "your response contained no code block and no function definition"
            )
        blocks = [region]

    impl_indices = [i for i, block in enumerate(blocks) if _defines(block, entry_point)]
    if not impl_indices:
        raise EntryPointMissingError(
            f"the code in your response does not define the function `{entry_point}`"
        )
    chosen = impl_indices[-1]

    code = ""
    tests: list[str] = []
    for i, block in enumerate(blocks):
        if i == chosen:
            code, block_tests = _split_block(block, entry_point)
            tests.extend(block_tests)
        elif i in impl_indices:
            continue  # superseded restatement of the implementation
        else:
            _, block_tests = _split_block(block, entry_point)
            tests.extend(block_tests)
    if not code.strip():
        raise EntryPointMissingError(
            f"the code in your response does not define the function `{entry_point}`"
        )
    return GenerationArtifact(
        code=code, tests=tuple(tests), raw_response=response, entry_point=entry_point
    )


def parse_repair(
    response: str,
    entry_point: str,
    prior: GenerationArtifact | None,
    refine_tests: bool = False,
) -> GenerationArtifact:
    """Parse a repair response.

    Code is extracted exactly as in ``parse_generation``.  Tests are the
    newly extracted ones when ``refine_tests`` is set and the response
    contains any; otherwise the prior tests carry forward unchanged.  With
    no prior artifact (the initial generation never parsed), the first
    successfully parsed response establishes the test set.
    """
    artifact = parse_generation(response, entry_point)
    if (refine_tests or prior is None) and artifact.tests:
        return artifact
    return replace(artifact, tests=prior.tests if prior is not None else ())
