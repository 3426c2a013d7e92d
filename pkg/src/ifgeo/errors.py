"""Exception types shared across the workbench."""

from __future__ import annotations


class GatewayError(Exception):
    """Base class for failures while talking to a completion backend."""


class TransportError(GatewayError):
    """Network-level failure (timeout, connection reset, 5xx)."""


class BackendRefusal(GatewayError):
    """The backend rejected the request (4xx, content refusal)."""


class BudgetExceeded(GatewayError):
    """The configured token budget would be exceeded by a fresh call."""


class ParseError(GatewayError):
    """No structured payload could be extracted from a completion."""


class SchemaError(GatewayError):
    """Extracted payload does not match the stage schema.

    ``path`` locates the offending element inside the payload.
    """

    def __init__(self, message: str, path: tuple[object, ...] = ()):
        super().__init__(message)
        self.path = tuple(path)


class PipelineError(Exception):
    """Base class for pipeline-stage failures."""


class EmptyQuerySet(PipelineError):
    """Query mining produced zero usable queries."""


class ProvenanceError(PipelineError):
    """A fused instruction cannot be traced back to the request pool."""


class CoverageError(PipelineError):
    """A blueprint lost instructions and the fallback could not recover them."""


class TruncationError(PipelineError):
    """A revision dropped whole sections that were supposed to survive."""


class LengthMismatch(ValueError):
    """Paired score vectors have different lengths."""


class UnknownQuery(KeyError):
    """Fixed retrieval was asked for a query outside its table."""


class FormatError(ValueError):
    """A dataset line is not valid JSON."""

    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class InvariantError(ValueError):
    """A structurally valid record violates a dataset invariant."""


class MissingArtifact(FileNotFoundError):
    """A run directory lacks an artifact required for reporting."""


class ConfigError(ValueError):
    """An experiment or pipeline option is out of range or unknown."""
