"""Trainable centralized orchestration of heterogeneous agent pools.

A selection policy activates one agent at a time from an immutable pool,
branch states evolve under width/depth budgets until a terminator selection,
answers merge by majority vote, and a cost-shaped REINFORCE loop trains the
policy to favor effective, cheap, and short agent chains.  Episode logs fold
back into directed interaction graphs for structural analysis.
"""
from .agents import (
    AgentOutput,
    AgentPool,
    AgentSpec,
    PoolConfig,
    ReasoningPattern,
    SimProfile,
    Tool,
    build_pool,
    default_agent_roster,
    execute_simulated,
)
from .envs import (
    EnvSpec,
    SimulatedBackend,
    bandit_env,
    chain_env,
    enumerate_tasks,
    make_env,
    noisy_env,
    refine_loop_env,
    rollout_scripted,
    sample_task,
    score,
)
from .errors import (
    CheckpointMismatchError,
    ConfigurationError,
    ContractError,
    EpisodeError,
    GatewayError,
    MarionetteError,
    ReplayMismatchError,
    ToolActionParseError,
    TrainingAbortError,
)
from .gateway import (
    ChatMessage,
    ChatRequest,
    PromptTemplate,
    RemoteBackend,
    RemoteBackendConfig,
    call_remote,
    call_with_retries,
    parse_tool_action,
    render_prompt,
)
from .orchestrator import (
    EpisodeResult,
    OrchestratorConfig,
    StepRecord,
    SystemState,
    TaskSpec,
    Trajectory,
    TrajectoryStep,
    extract_answer,
    majority_vote,
    replay,
    run_episode,
    step,
)
from .policy import (
    FeatureVector,
    PolicyParams,
    action_distribution,
    featurize,
    feature_length,
    init_params,
    load_checkpoint,
    log_prob_grad,
    save_checkpoint,
)
from .topology import (
    TopologyGraph,
    TopologyMetrics,
    fold,
    fold_sequences,
    metrics,
    to_adjacency,
    to_dot,
    trend_series,
)
from .trainer import (
    RewardConfig,
    TrainerConfig,
    TrainingReport,
    batch_gradient,
    compute_returns,
    eval_policy,
    step_cost,
    train,
    trajectory_return,
)

__version__ = "0.1.0"
