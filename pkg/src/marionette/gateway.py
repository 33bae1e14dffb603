"""Remote-agent backend speaking the JSON chat-completions HTTP protocol.

Wire format (documented contract, maximally backend-interchangeable):

    POST {endpoint}/v1/chat/completions
    Authorization: Bearer {key from env var PUPPETEER_API_KEY}
    body: {"model": ..., "messages": [{"role", "content"}, ...],
           "temperature": ..., "max_tokens": ...}

    response: choices[0].message.content plus usage.prompt_tokens /
    usage.completion_tokens; a missing usage block falls back to a chars/4
    estimate with a warning flag.

Transport, protocol, and timeout failures are all retryable signals;
:func:`call_remote` raises them and the caller applies the retry policy
(:func:`call_with_retries`, max 3 attempts with exponential backoff).
"""
from __future__ import annotations

import json
import logging
import os
import re
import threading
import time
from dataclasses import dataclass, field
from typing import TYPE_CHECKING, Callable, Sequence

import requests

from .agents import AgentOutput, AgentSpec
from .errors import (
    ConfigurationError,
    GatewayTimeoutError,
    ProtocolError,
    TemplateError,
    ToolActionParseError,
    TransportError,
)

if TYPE_CHECKING:
    from .orchestrator import SystemState

logger = logging.getLogger(__name__)

API_KEY_ENV = "PUPPETEER_API_KEY"
COMPLETIONS_PATH = "/v1/chat/completions"
VALID_ROLES = ("system", "user", "assistant")
_PLACEHOLDER_RE = re.compile(r"\{([A-Za-z_][A-Za-z0-9_]*)\}")


@dataclass(frozen=True)
class ChatMessage:
    role: str
    content: str

    def __post_init__(self) -> None:
        if self.role not in VALID_ROLES:
            raise ConfigurationError(f"message role must be one of {VALID_ROLES}")


@dataclass(frozen=True)
class ChatRequest:
    model: str
    messages: tuple[ChatMessage, ...]
    temperature: float = 0.7
    max_tokens: int = 1024

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple(self.messages))
        if not self.messages:
            raise ConfigurationError("request needs at least one message")
        if self.messages[0].role != "system":
            raise ConfigurationError("the first message must carry the system role prompt")
        if self.max_tokens < 1:
            raise ConfigurationError("max_tokens must be positive")

    def to_payload(self) -> dict:
        return {
            "model": self.model,
            "messages": [{"role": m.role, "content": m.content} for m in self.messages],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }

    @classmethod
    def from_payload(cls, payload: dict) -> "ChatRequest":
        return cls(
            model=payload["model"],
            messages=tuple(
                ChatMessage(role=m["role"], content=m["content"]) for m in payload["messages"]
            ),
            temperature=float(payload["temperature"]),
            max_tokens=int(payload["max_tokens"]),
        )


@dataclass(frozen=True)
class PromptTemplate:
    """Role identity plus action instruction with named ``{placeholder}`` slots.

    Only declared names are substituted; brace sequences that are not bare
    identifiers (e.g. the JSON action examples) pass through untouched.
    """

    role_prompt: str
    action_prompt: str
    placeholders: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "placeholders", tuple(self.placeholders))
        declared = set(self.placeholders)
        referenced = set(_PLACEHOLDER_RE.findall(self.role_prompt)) | set(
            _PLACEHOLDER_RE.findall(self.action_prompt)
        )
        undeclared = referenced - declared
        if undeclared:
            raise TemplateError(f"undeclared placeholders in template body: {sorted(undeclared)}")


def _substitute(body: str, values: dict[str, str], declared: Sequence[str]) -> str:
    def repl(match: re.Match) -> str:
        name = match.group(1)
        if name in declared:
            return values.get(name, "")
        return match.group(0)

    return _PLACEHOLDER_RE.sub(repl, body)


def serialize_history(state: "SystemState") -> str:
    """Prior step outputs, oldest first, as fed back to subsequent agents."""
    if not state.steps:
        return ""
    lines = ["*Your previous reasoning was:*"]
    for i, record in enumerate(state.steps, start=1):
        lines.append(f"[step {i} | {record.agent_id}] {record.text}")
    return "\n".join(lines)


def render_prompt(template: PromptTemplate, state: "SystemState") -> list[ChatMessage]:
    """System message = role prompt; user message = action prompt followed by
    the serialized prior context (empty history appends nothing)."""
    if not state.task.text:
        raise ConfigurationError("state carries no task text")
    values = {
        "task": state.task.text,
        "previous": state.steps[-1].text if state.steps else "",
        "history": serialize_history(state),
    }
    system = _substitute(template.role_prompt, values, template.placeholders)
    user = _substitute(template.action_prompt, values, template.placeholders)
    history = serialize_history(state)
    if history and "history" not in template.placeholders:
        user = f"{user}\n\n{history}"
    return [ChatMessage("system", system), ChatMessage("user", user)]


def _estimate_tokens(text: str) -> int:
    return len(text) // 4


def call_remote(
    request: ChatRequest,
    endpoint: str,
    auth: str,
    timeout: float = 60.0,
) -> AgentOutput:
    """One HTTP exchange; no retries here (the caller owns the retry policy)."""
    if not auth:
        raise ConfigurationError("auth token must be non-empty")
    url = endpoint.rstrip("/") + COMPLETIONS_PATH
    try:
        response = requests.post(
            url,
            json=request.to_payload(),
            headers={"Authorization": f"Bearer {auth}"},
            timeout=timeout,
        )
    except requests.Timeout as exc:
        raise GatewayTimeoutError(f"no response within {timeout}s from {url}") from exc
    except requests.RequestException as exc:
        raise TransportError(0, str(exc)) from exc

    if not (200 <= response.status_code < 300):
        raise TransportError(response.status_code, response.text[:200])
    try:
        body = response.json()
        text = body["choices"][0]["message"]["content"]
    except (ValueError, KeyError, IndexError, TypeError) as exc:
        raise ProtocolError(f"malformed completion body: {exc}") from exc

    usage = body.get("usage")
    if isinstance(usage, dict) and "prompt_tokens" in usage and "completion_tokens" in usage:
        prompt_tokens = int(usage["prompt_tokens"])
        completion_tokens = int(usage["completion_tokens"])
        estimated = False
    else:
        prompt_tokens = _estimate_tokens(
            "".join(m.content for m in request.messages)
        )
        completion_tokens = _estimate_tokens(text)
        estimated = True
        logger.warning("response from %s lacked a usage block; token counts estimated", url)
    return AgentOutput(
        text=text,
        tokens=prompt_tokens + completion_tokens,
        prompt_tokens=prompt_tokens,
        completion_tokens=completion_tokens,
        tokens_estimated=estimated,
    )


def call_with_retries(
    fn: Callable[[], AgentOutput],
    max_attempts: int = 3,
    base_delay: float = 1.0,
    sleep: Callable[[float], None] = time.sleep,
) -> AgentOutput:
    """Retry a remote call on any gateway error with exponential backoff."""
    last: Exception | None = None
    for attempt in range(max_attempts):
        try:
            return fn()
        except (TransportError, ProtocolError, GatewayTimeoutError) as exc:
            last = exc
            if attempt + 1 < max_attempts:
                delay = base_delay * 2**attempt
                logger.warning(
                    "remote call failed (attempt %d/%d): %s; retrying in %.2fs",
                    attempt + 1, max_attempts, exc, delay,
                )
                sleep(delay)
    assert last is not None
    raise last


def parse_tool_action(text: str) -> tuple[str, str]:
    """Extract the first well-formed JSON object carrying ``action`` and
    ``parameter``; surrounding prose is tolerated."""
    decoder = json.JSONDecoder()
    for start in range(len(text)):
        if text[start] != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(text, start)
        except (ValueError, TypeError):
            continue
        if isinstance(obj, dict) and "action" in obj and "parameter" in obj:
            action = obj["action"]
            parameter = obj["parameter"]
            if not isinstance(action, str):
                continue
            if not isinstance(parameter, str):
                parameter = json.dumps(parameter)
            return action, parameter
    raise ToolActionParseError("no JSON object with 'action' and 'parameter' keys found")


ToolHook = Callable[[str, str], str]


def _echo_tool(action: str, parameter: str) -> str:
    # real tool sandboxes are out of scope: echo the parsed invocation
    return f"[tool:{action}] {parameter}"


@dataclass
class RemoteBackendConfig:
    endpoint: str
    temperature: float = 0.7
    max_tokens: int = 1024
    timeout_s: float = 60.0
    max_retries: int = 3
    backoff_base_s: float = 1.0
    max_in_flight: int = 3
    agent_temperatures: dict[str, float] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.endpoint:
            raise ConfigurationError("remote endpoint must be non-empty")
        if self.max_in_flight < 1:
            raise ConfigurationError("max_in_flight must be >= 1")


class RemoteBackend:
    """Executes pool agents against a hosted model endpoint.

    Shareable across threads; concurrent calls are capped at
    ``max_in_flight`` (matching the parallel exploration width) by a
    semaphore, the only shared mutable state.
    """

    def __init__(
        self,
        config: RemoteBackendConfig,
        auth: str | None = None,
        tool_hook: ToolHook | None = None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        auth = auth if auth is not None else os.environ.get(API_KEY_ENV, "")
        if not auth:
            raise ConfigurationError(
                f"remote backend needs an API key (set {API_KEY_ENV} or pass auth)"
            )
        self.config = config
        self.auth = auth
        self.tool_hook = tool_hook or _echo_tool
        self._sleep = sleep
        self._gate = threading.BoundedSemaphore(config.max_in_flight)

    def run(self, agent: AgentSpec, state: "SystemState") -> AgentOutput:
        from .prompts import default_template  # local import: prompts depends on this module

        template = default_template(agent)
        messages = render_prompt(template, state)
        request = ChatRequest(
            model=agent.model_ref,
            messages=tuple(messages),
            temperature=self.config.agent_temperatures.get(agent.id, self.config.temperature),
            max_tokens=self.config.max_tokens,
        )
        with self._gate:
            output = call_with_retries(
                lambda: call_remote(
                    request, self.config.endpoint, self.auth, timeout=self.config.timeout_s
                ),
                max_attempts=self.config.max_retries,
                base_delay=self.config.backoff_base_s,
                sleep=self._sleep,
            )
        if agent.tool.value != "none":
            try:
                action, parameter = parse_tool_action(output.text)
            except ToolActionParseError:
                return output  # treat as plain reasoning text
            tool_result = self.tool_hook(action, parameter)
            return AgentOutput(
                text=f"{output.text}\n{tool_result}",
                tokens=output.tokens,
                prompt_tokens=output.prompt_tokens,
                completion_tokens=output.completion_tokens,
                tokens_estimated=output.tokens_estimated,
            )
        return output
