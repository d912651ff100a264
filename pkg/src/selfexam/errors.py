"""Exception hierarchy shared across the package."""

from __future__ import annotations


class SelfExamError(Exception):
    """Base class for every error raised by this package."""


class DatasetError(SelfExamError):
    """A task file is malformed or violates a dataset invariant."""


class TemplateError(SelfExamError):
    """A prompt template is missing, malformed, or incompletely bound."""


class ParseError(SelfExamError):
    """A model response could not be turned into a usable artifact."""


class NoCodeBlockError(ParseError):
    """The response contained neither a fenced block nor a bare definition."""


class EntryPointMissingError(ParseError):
    """Code was found but it does not define the required entry point."""


class TransportError(SelfExamError):
    """The chat endpoint failed after exhausting retries, or returned a
    non-retryable status."""


class ReplayMissError(SelfExamError):
    """Replay mode was asked for a request fingerprint that is not in the
    cassette.  Never falls back to a live call."""


class BackendUnavailableError(SelfExamError):
    """The execution runtime itself cannot be started.  An environment
    problem, distinct from any candidate failure."""


class EvaluationError(SelfExamError):
    """A scoring request is inconsistent (empty run, unknown task id)."""
