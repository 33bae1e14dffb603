"""Agent space definitions and the deterministic simulated execution backend.

An agent is the triple (backend model, reasoning pattern, tool).  Pools are
immutable ordered collections of agents; policy action indices refer to pool
positions, so iteration order is part of the contract.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Sequence

from .errors import ConfigurationError, ContractError

DEFAULT_TERMINATOR_ID = "terminator"


class ReasoningPattern(str, Enum):
    PLANNING = "planning"
    REASONING = "reasoning"
    CRITIQUE = "critique"
    REFLECT = "reflect"
    QUESTION = "question"
    SUMMARIZE = "summarize"
    CONCLUDE = "conclude"
    MODIFY = "modify"
    TERMINATE = "terminate"


class Tool(str, Enum):
    READ_FILE = "read_file"
    SEARCH_ARXIV = "search_arxiv"
    SEARCH_BING = "search_bing"
    ACCESS_WEBSITE = "access_website"
    RUN_PYTHON = "run_python"
    NONE = "none"


@dataclass(frozen=True)
class AgentSpec:
    """One selectable agent: backend model, reasoning pattern, optional tool.

    ``cost_factor`` is the per-activation cost scale used by the step-cost
    term of the return recursion (token-equivalent units).
    """

    id: str
    model_ref: str
    reasoning_pattern: ReasoningPattern
    tool: Tool = Tool.NONE
    cost_factor: float = 1.0

    def __post_init__(self) -> None:
        if not self.id:
            raise ConfigurationError("agent id must be non-empty")
        if self.cost_factor < 0:
            raise ConfigurationError(f"agent {self.id!r}: cost_factor must be >= 0")
        if self.is_terminator and self.tool is not Tool.NONE:
            raise ConfigurationError(f"agent {self.id!r}: a terminator cannot carry a tool")

    @property
    def is_terminator(self) -> bool:
        return self.reasoning_pattern is ReasoningPattern.TERMINATE

    def to_jsonable(self) -> dict:
        return {
            "id": self.id,
            "model_ref": self.model_ref,
            "reasoning_pattern": self.reasoning_pattern.value,
            "tool": self.tool.value,
            "cost_factor": self.cost_factor,
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "AgentSpec":
        return cls(
            id=obj["id"],
            model_ref=obj["model_ref"],
            reasoning_pattern=ReasoningPattern(obj["reasoning_pattern"]),
            tool=Tool(obj.get("tool", "none")),
            cost_factor=float(obj.get("cost_factor", 1.0)),
        )


@dataclass(frozen=True)
class AgentPool:
    """Ordered, immutable collection of agents with one designated terminator."""

    agents: tuple[AgentSpec, ...]
    terminator_index: int

    def __post_init__(self) -> None:
        if not self.agents:
            raise ConfigurationError("pool must be non-empty")
        ids = [a.id for a in self.agents]
        dupes = {i for i in ids if ids.count(i) > 1}
        if dupes:
            raise ConfigurationError(f"duplicate agent ids in pool: {sorted(dupes)}")
        terminators = [i for i, a in enumerate(self.agents) if a.is_terminator]
        if len(terminators) != 1:
            raise ConfigurationError(
                f"pool must contain exactly one terminator, found {len(terminators)}"
            )
        if terminators[0] != self.terminator_index:
            raise ConfigurationError(
                f"terminator_index {self.terminator_index} does not point at the terminator"
            )
        if len(self.agents) < 2:
            raise ConfigurationError("pool needs at least one non-terminator agent")

    def __len__(self) -> int:
        return len(self.agents)

    def __iter__(self) -> Iterator[AgentSpec]:
        return iter(self.agents)

    def __getitem__(self, index: int) -> AgentSpec:
        return self.agents[index]

    @property
    def terminator(self) -> AgentSpec:
        return self.agents[self.terminator_index]

    def index_of(self, agent_id: str) -> int:
        for i, a in enumerate(self.agents):
            if a.id == agent_id:
                return i
        raise KeyError(agent_id)

    def non_terminator_indices(self) -> list[int]:
        return [i for i in range(len(self.agents)) if i != self.terminator_index]

    def fingerprint(self) -> str:
        """Stable hash of the ordered agent ids; guards checkpoint compatibility."""
        joined = "\n".join(a.id for a in self.agents)
        return hashlib.sha256(joined.encode("utf-8")).hexdigest()

    def to_jsonable(self) -> dict:
        return {
            "agents": [a.to_jsonable() for a in self.agents],
            "terminator_index": self.terminator_index,
        }

    @classmethod
    def from_jsonable(cls, obj: dict) -> "AgentPool":
        return cls(
            agents=tuple(AgentSpec.from_jsonable(a) for a in obj["agents"]),
            terminator_index=int(obj["terminator_index"]),
        )


@dataclass(frozen=True)
class PoolConfig:
    """Input to :func:`build_pool`: the configured agents, in order.

    A default terminator is appended when the config does not list one.
    """

    agents: tuple[AgentSpec, ...]
    auto_terminator: bool = True


@dataclass(frozen=True)
class SimProfile:
    """Behavior profile of a simulated agent.

    Each activation flips the branch's latent correctness toward correct with
    probability ``improve_prob``, toward incorrect with ``degrade_prob``, and
    leaves it unchanged otherwise.  ``emit_cost`` is the token count charged
    per activation.
    """

    improve_prob: float
    degrade_prob: float = 0.0
    emit_cost: float = 0.0
    seedable: bool = True

    def __post_init__(self) -> None:
        if not (0.0 <= self.improve_prob <= 1.0) or not (0.0 <= self.degrade_prob <= 1.0):
            raise ConfigurationError("improve_prob and degrade_prob must lie in [0, 1]")
        if self.improve_prob + self.degrade_prob > 1.0:
            raise ConfigurationError("improve_prob + degrade_prob must be <= 1")
        if self.emit_cost < 0:
            raise ConfigurationError("emit_cost must be >= 0")


@dataclass(frozen=True)
class AgentOutput:
    """Result of one agent activation, simulated or remote."""

    text: str
    tokens: int
    latent_delta: int = 0  # -1 flips toward incorrect, +1 toward correct, 0 no change
    prompt_tokens: int = 0
    completion_tokens: int = 0
    tokens_estimated: bool = False


def default_terminator(cost_factor: float = 0.0) -> AgentSpec:
    return AgentSpec(
        id=DEFAULT_TERMINATOR_ID,
        model_ref="none",
        reasoning_pattern=ReasoningPattern.TERMINATE,
        tool=Tool.NONE,
        cost_factor=cost_factor,
    )


def build_pool(config: PoolConfig | Sequence[AgentSpec]) -> AgentPool:
    """Assemble an :class:`AgentPool` from configured agents.

    Indices are assigned in config order.  When the config lists no
    terminator one is appended at the end; listing more than one is an error,
    as is listing zero non-terminator agents.
    """
    if isinstance(config, PoolConfig):
        agents = list(config.agents)
        auto = config.auto_terminator
    else:
        agents = list(config)
        auto = True

    terminators = [a for a in agents if a.is_terminator]
    if len(terminators) > 1:
        raise ConfigurationError("pool config lists more than one terminator")
    if len(agents) - len(terminators) < 1:
        raise ConfigurationError("pool config must list at least one non-terminator agent")
    if not terminators:
        if not auto:
            raise ConfigurationError("pool config lists no terminator and auto_terminator is off")
        agents.append(default_terminator())

    term_index = next(i for i, a in enumerate(agents) if a.is_terminator)
    return AgentPool(agents=tuple(agents), terminator_index=term_index)


def default_agent_roster(model_ref: str = "sim-default", cost_factor: float = 1.0) -> list[AgentSpec]:
    """The shipped roster: eight reasoning patterns plus five tool agents.

    The terminator is added by :func:`build_pool`.
    """
    reasoning = [
        ("planner", ReasoningPattern.PLANNING),
        ("reasoner", ReasoningPattern.REASONING),
        ("critic", ReasoningPattern.CRITIQUE),
        ("reflector", ReasoningPattern.REFLECT),
        ("questioner", ReasoningPattern.QUESTION),
        ("summarizer", ReasoningPattern.SUMMARIZE),
        ("concluder", ReasoningPattern.CONCLUDE),
        ("modifier", ReasoningPattern.MODIFY),
    ]
    tools = [
        ("file_reader", Tool.READ_FILE),
        ("arxiv_searcher", Tool.SEARCH_ARXIV),
        ("bing_searcher", Tool.SEARCH_BING),
        ("website_reader", Tool.ACCESS_WEBSITE),
        ("python_runner", Tool.RUN_PYTHON),
    ]
    roster = [
        AgentSpec(id=name, model_ref=model_ref, reasoning_pattern=pattern, cost_factor=cost_factor)
        for name, pattern in reasoning
    ]
    roster += [
        AgentSpec(
            id=name,
            model_ref=model_ref,
            reasoning_pattern=ReasoningPattern.REASONING,
            tool=tool,
            cost_factor=cost_factor,
        )
        for name, tool in tools
    ]
    return roster


def _unit_draw(seed: int, state_digest: str, agent_id: str) -> float:
    """Deterministic draw in [0, 1) from the (seed, digest, agent) triple."""
    key = f"{seed}|{state_digest}|{agent_id}".encode("utf-8")
    raw = int.from_bytes(hashlib.sha256(key).digest()[:8], "big")
    return raw / 2.0**64


def mix_seed(*parts: int | str) -> int:
    """Fold arbitrary parts into one 63-bit stream seed."""
    key = "|".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "big") >> 1


def execute_simulated(
    agent: AgentSpec, profile: SimProfile, state_digest: str, seed: int
) -> AgentOutput:
    """Run one simulated activation.

    Pure function of (agent, profile, state digest, seed): repeated calls with
    identical inputs return identical outputs.  The latent-correctness delta
    is drawn from a hash of the inputs so improvement frequency over
    independent seeds matches ``improve_prob``.
    """
    if agent.is_terminator:
        raise ContractError("the terminator is never executed")
    u = _unit_draw(seed, state_digest, agent.id)
    if u < profile.improve_prob:
        delta = 1
    elif u < profile.improve_prob + profile.degrade_prob:
        delta = -1
    else:
        delta = 0
    text = (
        f"[{agent.id}/{agent.reasoning_pattern.value}] "
        f"worked on state {state_digest[:12]} (draw={u:.6f})"
    )
    return AgentOutput(text=text, tokens=int(round(profile.emit_cost)), latent_delta=delta)
