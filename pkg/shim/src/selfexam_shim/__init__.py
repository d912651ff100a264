"""Fixed in-runtime harness for untrusted candidate code.

Protocol: one JSON payload ``{candidate_source, test_statements,
entry_point}`` arrives on stdin; exactly one JSON outcome line leaves on
stdout::

    {"status": "pass"}
    {"status": "assert", "test_index": i, "message": "..."}
    {"status": "error", "message": "..."}

The candidate loads in-process; the parent's wall-clock limit is the kill
switch for runaway code.  Candidate prints are redirected away at the file
descriptor level, so the protocol line on the real stdout stays
unambiguous.  Failures whose class is AssertionError map to "assert";
every other failure - syntax errors, import errors, crashes - maps to
"error".  Load-time failures are always "error".

Exit status: 0 whenever the protocol ran (regardless of the candidate's
fate); 2 when stdin did not contain a valid payload.
"""

from __future__ import annotations

import json
import os
import sys
import traceback

__version__ = "0.1.0"

PROTOCOL_ERROR_EXIT = 2

_CANDIDATE_FILE = "<candidate>"
_NAMESPACE_NAME = "__selfexam_candidate__"


def _format_failure(exc: BaseException) -> str:
    """Traceback text limited to candidate/test frames, ending with the
    ``ErrorType: detail`` line.  Deterministic for identical inputs."""
    tb_exc = traceback.TracebackException.from_exception(exc)
    parts = []
    frames = [f for f in tb_exc.stack if f.filename.startswith("<")]
    if frames:
        parts.append("Traceback (most recent call last):\n")
        parts.extend(traceback.StackSummary.from_list(frames).format())
    parts.extend(tb_exc.format_exception_only())
    return "".join(parts).rstrip("\n")


def _describe_test(index: int, statement: str) -> str:
    head = statement.splitlines()[0] if statement else ""
    if len(head) > 200:
        head = head[:200] + "..."
    return f"failing test [{index}]: {head}\n"


def execute(candidate_source: str, test_statements: list) -> dict:
    """Load the candidate, then run each test statement in order.

    Statements run verbatim, in the given order, in the namespace the
    candidate populated; the first failure decides the outcome.
    """
    namespace = {"__name__": _NAMESPACE_NAME}
    try:
        exec(compile(candidate_source, _CANDIDATE_FILE, "exec"), namespace)
    except KeyboardInterrupt:
        raise
    except BaseException as exc:
        return {"status": "error", "message": _format_failure(exc)}

    for index, statement in enumerate(test_statements):
        try:
            exec(compile(statement, f"<test {index}>", "exec"), namespace)
        except KeyboardInterrupt:
            raise
        except AssertionError as exc:
            return {
                "status": "assert",
                "test_index": index,
                "message": _describe_test(index, statement) + _format_failure(exc),
            }
        except BaseException as exc:
            return {
                "status": "error",
                "message": _describe_test(index, statement) + _format_failure(exc),
            }
    return {"status": "pass"}


def _load_payload(raw: str) -> dict:
    payload = json.loads(raw)
    if not isinstance(payload, dict):
        raise TypeError("payload must be a JSON object")
    candidate = payload["candidate_source"]
    tests = payload["test_statements"]
    entry_point = payload["entry_point"]
    if not isinstance(candidate, str):
        raise TypeError("candidate_source must be a string")
    if not isinstance(tests, list) or not all(isinstance(t, str) for t in tests):
        raise TypeError("test_statements must be a list of strings")
    if not isinstance(entry_point, str):
        raise TypeError("entry_point must be a string")
    return payload


def main() -> int:
    raw = sys.stdin.read()
    try:
        payload = _load_payload(raw)
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        print(f"protocol error: {exc}", file=sys.stderr)
        return PROTOCOL_ERROR_EXIT

    # Claim the real stdout for the protocol line, then point fd 1 at the
    # null device so nothing the candidate prints can reach the channel.
    protocol = os.fdopen(os.dup(sys.stdout.fileno()), "w", encoding="utf-8")
    devnull = os.open(os.devnull, os.O_WRONLY)
    os.dup2(devnull, sys.stdout.fileno())
    os.close(devnull)

    result = execute(payload["candidate_source"], payload["test_statements"])
    protocol.write(json.dumps(result, sort_keys=True) + "\n")
    protocol.flush()
    return 0


def entry() -> None:
    sys.exit(main())
