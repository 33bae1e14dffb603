"""Deterministic synthetic task environments for desk-scale training.

Three latent models separate the trained behaviors under test: ``bandit``
(success hinges on activating the one capable agent), ``chain`` (success
requires an ordered agent route, checked as a subsequence of the branch's
activations), and ``noisy`` (success accumulates probabilistically per agent
profile).  Every environment is a pure function of its seed.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .agents import (
    AgentOutput,
    AgentPool,
    AgentSpec,
    ReasoningPattern,
    SimProfile,
    build_pool,
    execute_simulated,
    mix_seed,
)
from .errors import ConfigurationError, ContractError
from .orchestrator import (
    ANSWER_MARKER,
    StepRecord,
    SystemState,
    TaskSpec,
    extract_answer,
)
from .scoring import Scorer, resolve_scorer

LATENT_MODELS = ("bandit", "chain", "noisy")
WRONG_ANSWER = "unresolved"


@dataclass(frozen=True)
class EnvSpec:
    """A task distribution plus per-agent simulation profiles."""

    name: str
    latent_model: str
    profile_map: dict[str, SimProfile]
    scorer: str | Scorer = "exact"
    domain: str = "closed"
    n_tasks: int = 50
    task_prefix: str = "Resolve"
    routes: tuple[tuple[str, ...], ...] = ()
    scripted_optimal: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.latent_model not in LATENT_MODELS:
            raise ConfigurationError(f"unknown latent model {self.latent_model!r}")
        if self.latent_model == "chain" and not self.routes:
            raise ConfigurationError("chain environments need at least one route")
        if self.n_tasks < 1:
            raise ConfigurationError("n_tasks must be >= 1")


def validate_env_pool(env: EnvSpec, pool: AgentPool) -> None:
    """Profiles must cover every non-terminator agent."""
    missing = [
        pool.agents[i].id
        for i in pool.non_terminator_indices()
        if pool.agents[i].id not in env.profile_map
    ]
    if missing:
        raise ConfigurationError(f"env {env.name!r} lacks profiles for agents: {missing}")


def task_for_index(env: EnvSpec, k: int) -> TaskSpec:
    ground_truth = str(100 + (k * 37) % 900)
    return TaskSpec(
        id=f"{env.name}-{k:04d}",
        text=f"{env.task_prefix} puzzle {k}: report the reference code.",
        ground_truth=ground_truth,
        domain=env.domain,
    )


def sample_task(env: EnvSpec, rng: np.random.Generator) -> TaskSpec:
    """Draw one task; deterministic given the generator state."""
    return task_for_index(env, int(rng.integers(env.n_tasks)))


def enumerate_tasks(env: EnvSpec) -> list[TaskSpec]:
    return [task_for_index(env, k) for k in range(env.n_tasks)]


def score(env: EnvSpec, answer: str, task: TaskSpec) -> float:
    """Scorer output clamped to [0, 1]; closed domain defaults to exact match."""
    fn = resolve_scorer(env.scorer, task.domain)
    return float(np.clip(fn(answer, task), 0.0, 1.0))


def _route_satisfied(route: Sequence[str], activations: Sequence[str]) -> bool:
    """True when ``route`` is an ordered subsequence of ``activations``."""
    remaining = iter(activations)
    return all(agent_id in remaining for agent_id in route)


class SimulatedBackend:
    """Executes pool agents against an :class:`EnvSpec`.

    Output text, token counts, and latent deltas are pure functions of
    (backend seed, branch id, state digest), so fixed-seed episodes replay
    bitwise.  Each step's text carries the branch's current answer so that
    answer extraction and scoring work exactly as with a live backend.
    """

    def __init__(self, env: EnvSpec, pool: AgentPool, seed: int = 0):
        validate_env_pool(env, pool)
        self.env = env
        self.pool = pool
        self.seed = seed

    def _branch_seed(self, state: SystemState) -> int:
        return mix_seed(self.seed, state.branch_id)

    def run(self, agent: AgentSpec, state: SystemState) -> AgentOutput:
        if agent.is_terminator:
            raise ContractError("the terminator is never executed")
        profile = self.env.profile_map[agent.id]
        if self.env.latent_model == "chain":
            activations = [rec.agent_id for rec in state.steps] + [agent.id]
            satisfied = any(_route_satisfied(r, activations) for r in self.env.routes)
            delta = 1 if satisfied and not state.latent_correct else 0
            draw_note = f"route={'hit' if satisfied else 'open'}"
            text = (
                f"[{agent.id}/{agent.reasoning_pattern.value}] "
                f"worked on state {state.digest[:12]} ({draw_note})"
            )
            base = AgentOutput(text=text, tokens=int(round(profile.emit_cost)), latent_delta=delta)
        else:
            base = execute_simulated(agent, profile, state.digest, self._branch_seed(state))

        new_latent = state.latent_correct if base.latent_delta == 0 else base.latent_delta > 0
        answer = state.task.ground_truth if new_latent else WRONG_ANSWER
        return AgentOutput(
            text=f"{base.text}\n{ANSWER_MARKER} {answer}",
            tokens=base.tokens,
            latent_delta=base.latent_delta,
        )


def rollout_scripted(
    env: EnvSpec,
    task: TaskSpec,
    agent_ids: Sequence[str],
    pool: AgentPool,
    backend: SimulatedBackend,
    branch_id: int = 0,
) -> tuple[float, str]:
    """Run a hard-coded action sequence (terminator appended) on one branch.

    Returns (reward, answer).  Used for solvability calibration and for
    brute-force checks over small action spaces.
    """
    state = SystemState(task=task, branch_id=branch_id)
    for agent_id in agent_ids:
        agent = pool.agents[pool.index_of(agent_id)]
        output = backend.run(agent, state)
        latent = state.latent_correct if output.latent_delta == 0 else output.latent_delta > 0
        state = state.advance(
            StepRecord(
                agent_index=pool.index_of(agent_id),
                agent_id=agent_id,
                text=output.text,
                tokens=output.tokens,
                latent_correct=latent,
            )
        )
    answer = extract_answer([rec.text for rec in state.steps])
    return score(env, answer, task), answer


def _sim_agent(agent_id: str, cost_factor: float, model_ref: str = "sim") -> AgentSpec:
    return AgentSpec(
        id=agent_id,
        model_ref=model_ref,
        reasoning_pattern=ReasoningPattern.REASONING,
        cost_factor=cost_factor,
    )


def bandit_env(
    best_id: str = "ace",
    n_others: int = 2,
    best_improve: float = 0.9,
    other_improve: float = 0.1,
    other_degrade: float = 0.0,
    emit_cost: float = 20.0,
    cost_factor: float = 1.0,
    n_tasks: int = 50,
) -> tuple[AgentPool, EnvSpec]:
    """One clearly superior agent among equals: tests agent prioritization.

    ``other_degrade`` > 0 makes distractor flips symmetric noise, so success
    hinges even more exclusively on the best agent.
    """
    agents = [_sim_agent(best_id, cost_factor)]
    agents += [_sim_agent(f"dud{i + 1}", cost_factor) for i in range(n_others)]
    pool = build_pool(agents)
    profiles = {
        a.id: SimProfile(
            improve_prob=best_improve if a.id == best_id else other_improve,
            degrade_prob=0.0 if a.id == best_id else other_degrade,
            emit_cost=emit_cost,
        )
        for a in agents
    }
    env = EnvSpec(
        name="bandit",
        latent_model="bandit",
        profile_map=profiles,
        n_tasks=n_tasks,
        task_prefix="Bandit",
        scripted_optimal=(best_id, best_id, best_id),
    )
    return pool, env


def chain_env(
    routes: Sequence[Sequence[str]] = (("solver",), ("planner", "worker", "finisher")),
    emit_cost: float = 30.0,
    cost_factor: float = 1.0,
    n_tasks: int = 50,
    name: str = "chain",
) -> tuple[AgentPool, EnvSpec]:
    """Success requires completing one of the configured agent routes in order."""
    seen: list[str] = []
    for route in routes:
        for agent_id in route:
            if agent_id not in seen:
                seen.append(agent_id)
    pool = build_pool([_sim_agent(agent_id, cost_factor) for agent_id in seen])
    profiles = {
        agent_id: SimProfile(improve_prob=0.0, emit_cost=emit_cost) for agent_id in seen
    }
    shortest = min(routes, key=len)
    env = EnvSpec(
        name=name,
        latent_model="chain",
        profile_map=profiles,
        n_tasks=n_tasks,
        task_prefix="Chain",
        routes=tuple(tuple(r) for r in routes),
        scripted_optimal=tuple(shortest),
    )
    return pool, env


def noisy_env(
    improve_probs: dict[str, float] | None = None,
    cost_factors: dict[str, float] | None = None,
    emit_costs: dict[str, float] | None = None,
    degrade_probs: dict[str, float] | None = None,
    n_tasks: int = 50,
) -> tuple[AgentPool, EnvSpec]:
    """Probabilistic improvements per profile; default: equal skill, 5x cost gap."""
    improve_probs = improve_probs or {"thrifty": 0.9, "lavish": 0.9}
    cost_factors = cost_factors or {"thrifty": 1.0, "lavish": 5.0}
    emit_costs = emit_costs or {agent_id: 20.0 for agent_id in improve_probs}
    degrade_probs = degrade_probs or {}
    pool = build_pool(
        [_sim_agent(agent_id, cost_factors.get(agent_id, 1.0)) for agent_id in improve_probs]
    )
    profiles = {
        agent_id: SimProfile(
            improve_prob=p,
            degrade_prob=degrade_probs.get(agent_id, 0.0),
            emit_cost=emit_costs.get(agent_id, 20.0),
        )
        for agent_id, p in improve_probs.items()
    }
    cheapest = min(cost_factors, key=cost_factors.get)
    env = EnvSpec(
        name="noisy",
        latent_model="noisy",
        profile_map=profiles,
        n_tasks=n_tasks,
        task_prefix="Noisy",
        scripted_optimal=(cheapest, cheapest),
    )
    return pool, env


def refine_loop_env(
    emit_cost: float = 25.0,
    cost_factor: float = 1.0,
    n_tasks: int = 50,
) -> tuple[AgentPool, EnvSpec]:
    """Success requires revisiting an agent (draft -> critique -> redraft):
    trained episodes fold into graphs with cycles."""
    return chain_env(
        routes=(("drafter", "critic", "drafter"), ("critic", "drafter", "critic")),
        emit_cost=emit_cost,
        cost_factor=cost_factor,
        n_tasks=n_tasks,
        name="refine-loop",
    )


ENV_FACTORIES: dict[str, Callable[..., tuple[AgentPool, EnvSpec]]] = {
    "bandit": bandit_env,
    "chain": chain_env,
    "noisy": noisy_env,
    "refine_loop": refine_loop_env,
}


def make_env(kind: str, **params) -> tuple[AgentPool, EnvSpec]:
    try:
        factory = ENV_FACTORIES[kind]
    except KeyError:
        raise ConfigurationError(
            f"unknown env kind {kind!r}; expected one of {sorted(ENV_FACTORIES)}"
        ) from None
    return factory(**params)
