"""Exception hierarchy shared across the package."""
from __future__ import annotations


class MarionetteError(Exception):
    """Base class for all package errors."""


class ConfigurationError(MarionetteError):
    """Invalid configuration (pool, env, run config, checkpoint schema)."""

    def __init__(self, message: str, *, field_errors: list[tuple[str, str]] | None = None):
        super().__init__(message)
        # (field path, message) pairs for CLI diagnostics
        self.field_errors = field_errors or []


class ContractError(MarionetteError):
    """A documented precondition was violated by the caller."""


class CheckpointMismatchError(MarionetteError):
    """Checkpoint does not match the pool it is being loaded against."""


class EpisodeError(MarionetteError):
    """An episode could not produce any usable trajectory."""


class ReplayMismatchError(MarionetteError):
    """Replay diverged from the recorded episode."""

    def __init__(self, branch_id: int, step_index: int, detail: str):
        super().__init__(f"replay mismatch at branch {branch_id}, step {step_index}: {detail}")
        self.branch_id = branch_id
        self.step_index = step_index


class TrainingAbortError(MarionetteError):
    """Training stopped because an update became non-finite."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class GatewayError(MarionetteError):
    """Base class for remote-backend failures; all are retryable signals."""


class TransportError(GatewayError):
    """Non-2xx HTTP response."""

    def __init__(self, status: int, body_excerpt: str):
        super().__init__(f"remote returned status {status}: {body_excerpt}")
        self.status = status
        self.body_excerpt = body_excerpt


class ProtocolError(GatewayError):
    """Response body did not match the expected wire format."""


class GatewayTimeoutError(GatewayError):
    """Remote call exceeded the configured timeout."""


class TemplateError(MarionetteError):
    """Prompt template referenced an undeclared placeholder."""


class ToolActionParseError(MarionetteError):
    """No well-formed tool action object found in agent output."""
