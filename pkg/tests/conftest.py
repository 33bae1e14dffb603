from __future__ import annotations

import numpy as np
import pytest

from marionette import (
    AgentSpec,
    EnvSpec,
    OrchestratorConfig,
    ReasoningPattern,
    SimProfile,
    SimulatedBackend,
    SystemState,
    TaskSpec,
    build_pool,
    init_params,
)


def sim_agent(agent_id: str, cost_factor: float = 1.0) -> AgentSpec:
    return AgentSpec(
        id=agent_id,
        model_ref="sim",
        reasoning_pattern=ReasoningPattern.REASONING,
        cost_factor=cost_factor,
    )


@pytest.fixture
def small_pool():
    return build_pool([sim_agent("a"), sim_agent("b"), sim_agent("c")])


@pytest.fixture
def small_env(small_pool):
    profiles = {
        agent.id: SimProfile(improve_prob=0.5, emit_cost=10.0)
        for agent in small_pool
        if not agent.is_terminator
    }
    return EnvSpec(name="small", latent_model="noisy", profile_map=profiles)


@pytest.fixture
def small_backend(small_env, small_pool):
    return SimulatedBackend(small_env, small_pool, seed=11)


@pytest.fixture
def task():
    return TaskSpec(id="t-1", text="Find the secret number.", ground_truth="42")


@pytest.fixture
def fresh_params(small_pool):
    return init_params(small_pool)


@pytest.fixture
def orch_config():
    return OrchestratorConfig()


def make_state(task: TaskSpec, branch_id: int = 0) -> SystemState:
    return SystemState(task=task, branch_id=branch_id)


def rng(seed=0) -> np.random.Generator:
    return np.random.default_rng(seed)
