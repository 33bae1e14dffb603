"""REINFORCE optimization of the selection policy.

Returns are computed by the cost-shaped recursion

    R_T = r - lambda * C_T
    R_t = gamma * R_{t+1} - lambda * C_t          (t < T)
    C_t = F * ln(1 + t / phi)

with natural log (a different base would only rescale lambda).  Decision
times are 1-based: the step stored at list index i happened at time t = i + 1
and is charged C_{i+1} with that step's own agent cost factor, so the
terminal entry C_T is priced at the terminator's (typically zero) cost.  Time
0 carries no action and C_0 = 0, making R_0 the value of the whole
trajectory; the gradient estimator scales each trajectory's summed score
function by that R_0.
"""
from __future__ import annotations

import csv
import logging
import math
import time
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import policy as policy_mod
from .agents import AgentPool
from .envs import EnvSpec, SimulatedBackend, sample_task
from .errors import ConfigurationError, ContractError, TrainingAbortError
from .orchestrator import (
    EpisodeResult,
    OrchestratorConfig,
    Trajectory,
    run_episode,
)

logger = logging.getLogger(__name__)

__all__ = [
    "RewardConfig",
    "TrainerConfig",
    "Trajectory",
    "TrainingReport",
    "step_cost",
    "compute_returns",
    "trajectory_return",
    "batch_gradient",
    "train",
    "eval_policy",
]


@dataclass(frozen=True)
class RewardConfig:
    """Accuracy/efficiency trade-off knobs of the return recursion."""

    lam: float = 0.1
    gamma: float = 0.99
    phi: int = 4
    cost_scale_mode: str = "per_agent"  # or "global"
    global_cost: float | None = None

    def __post_init__(self) -> None:
        if self.lam < 0:
            raise ConfigurationError("lambda must be >= 0")
        if not (0.0 < self.gamma <= 1.0):
            raise ConfigurationError("gamma must lie in (0, 1]")
        if self.phi < 1:
            raise ConfigurationError("phi must be >= 1")
        if self.cost_scale_mode not in ("per_agent", "global"):
            raise ConfigurationError("cost_scale_mode must be 'per_agent' or 'global'")
        if self.cost_scale_mode == "global" and (self.global_cost is None or self.global_cost < 0):
            raise ConfigurationError("global cost mode requires a nonnegative global_cost")


@dataclass(frozen=True)
class TrainerConfig:
    learning_rate: float = 0.05
    batch_size: int = 8
    episodes: int = 500
    baseline: str = "none"  # or "moving_average"
    baseline_window: int = 20
    checkpoint_every: int = 50
    per_step_returns: bool = False
    seed: int = 0

    def __post_init__(self) -> None:
        if self.learning_rate < 0:
            raise ConfigurationError("learning_rate must be >= 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.episodes < 0:
            raise ConfigurationError("episodes must be >= 0")
        if self.baseline not in ("none", "moving_average"):
            raise ConfigurationError("baseline must be 'none' or 'moving_average'")
        if self.baseline_window < 1:
            raise ConfigurationError("baseline_window must be >= 1")
        if self.checkpoint_every < 1:
            raise ConfigurationError("checkpoint_every must be >= 1")


def step_cost(t: int, config: RewardConfig, agent_cost: float) -> float:
    """C_t = F * ln(1 + t / phi); F is the per-agent cost factor unless the
    config pins a global one."""
    if t < 0:
        raise ContractError("step index must be >= 0")
    f = config.global_cost if config.cost_scale_mode == "global" else agent_cost
    return f * math.log(1.0 + t / config.phi)


def compute_returns(traj: Trajectory, config: RewardConfig) -> np.ndarray:
    """Return vector R_0..R_T for a trajectory of T steps (length T + 1)."""
    total = traj.length
    if total < 1:
        raise ContractError("compute_returns requires at least one step")
    returns = np.zeros(total + 1, dtype=np.float64)
    returns[total] = traj.terminal_reward - config.lam * step_cost(
        total, config, traj.steps[total - 1].cost_factor
    )
    for t in range(total - 1, -1, -1):
        cost = step_cost(t, config, traj.steps[t - 1].cost_factor) if t >= 1 else 0.0
        returns[t] = config.gamma * returns[t + 1] - config.lam * cost
    return returns


def trajectory_return(traj: Trajectory, config: RewardConfig) -> float:
    """R(tau): the recursion's value at the initial step."""
    return float(compute_returns(traj, config)[0])


def _step_grad(params: policy_mod.PolicyParams, step) -> np.ndarray:
    if step.grad_cache is not None:
        return step.grad_cache
    return policy_mod.log_prob_grad(params, step.features, step.mask, step.agent_index)


def batch_gradient(
    batch: Sequence[Trajectory],
    params: policy_mod.PolicyParams,
    reward_config: RewardConfig,
    trainer_config: TrainerConfig | None = None,
    baseline: float = 0.0,
) -> np.ndarray:
    """Monte Carlo policy-gradient estimate over a batch of trajectories.

    (1/N) sum_n [ (sum over non-forced steps of grad log pi) * (R(tau_n) - b) ].
    Forced terminator selections are not decisions of the policy and carry no
    score term.  With ``per_step_returns`` each step is scaled by its own
    return-to-go R_{t} instead of R(tau) (variance-reduced variant, off by
    default).
    """
    if not batch:
        raise ContractError("batch must contain at least one trajectory")
    trainer_config = trainer_config or TrainerConfig()
    fingerprint = params.fingerprint()
    grad = np.zeros_like(params.weights)
    for traj in batch:
        if traj.params_fingerprint and traj.params_fingerprint != fingerprint:
            raise ContractError("off-policy trajectory: params fingerprint mismatch")
        returns = compute_returns(traj, reward_config)
        if trainer_config.per_step_returns:
            for i, step in enumerate(traj.steps):
                if step.forced:
                    continue
                grad += _step_grad(params, step) * (returns[i + 1] - baseline)
        else:
            weight = returns[0] - baseline
            if weight != 0.0:
                for step in traj.steps:
                    if step.forced:
                        continue
                    grad += _step_grad(params, step) * weight
    return grad / len(batch)


@dataclass
class TrainingReport:
    """Summary of one training run plus the per-episode history."""

    episodes: int
    final_mean_reward: float
    final_mean_tokens: float
    wall_time_s: float
    batches_applied: int = 0
    history: list[dict] = field(default_factory=list, repr=False)

    def to_jsonable(self) -> dict:
        return {
            "episodes": self.episodes,
            "final_mean_reward": self.final_mean_reward,
            "final_mean_tokens": self.final_mean_tokens,
            "wall_time": self.wall_time_s,
        }


class MetricsWriter:
    """Per-episode CSV: reward, return, tokens, steps, per-agent selections."""

    def __init__(self, path: str | Path, pool: AgentPool):
        self.path = Path(path)
        self.agent_ids = [a.id for a in pool]
        self._fh = self.path.open("w", newline="", encoding="utf-8")
        self._writer = csv.writer(self._fh)
        self._writer.writerow(
            ["episode", "reward", "return", "tokens", "steps", "answer_correct"]
            + [f"sel_{agent_id}" for agent_id in self.agent_ids]
        )

    def write(self, row: dict) -> None:
        counts = row["selection_counts"]
        self._writer.writerow(
            [
                row["episode"],
                repr(row["reward"]),
                repr(row["return"]),
                row["tokens"],
                repr(row["steps"]),
                row["answer_correct"],
            ]
            + [counts.get(agent_id, 0) for agent_id in self.agent_ids]
        )

    def close(self) -> None:
        self._fh.close()


def _episode_row(
    episode_index: int, result: EpisodeResult, reward_config: RewardConfig
) -> dict:
    counts: dict[str, int] = {}
    for traj in result.trajectories:
        for step in traj.steps:
            counts[step.agent_id] = counts.get(step.agent_id, 0) + 1
    mean_return = float(
        np.mean([trajectory_return(t, reward_config) for t in result.trajectories])
    )
    mean_steps = float(np.mean([t.length for t in result.trajectories]))
    return {
        "episode": episode_index,
        "reward": result.terminal_reward,
        "return": mean_return,
        "tokens": result.total_tokens,
        "steps": mean_steps,
        "answer_correct": int(result.terminal_reward >= 0.999),
        "selection_counts": counts,
    }


def _finite_or_abort(grad: np.ndarray, batch: Sequence[Trajectory], episode: int) -> None:
    if np.all(np.isfinite(grad)):
        return
    bad = int(np.size(grad) - np.count_nonzero(np.isfinite(grad)))
    diagnostics = {
        "episode": episode,
        "non_finite_entries": bad,
        "batch_size": len(batch),
        "batch": [
            {
                "branch_id": t.branch_id,
                "reward": t.terminal_reward,
                "length": t.length,
                "log_probs": [s.log_prob for s in t.steps],
                "agents": [s.agent_id for s in t.steps],
            }
            for t in batch
        ],
    }
    raise TrainingAbortError(
        f"non-finite gradient ({bad} entries) at episode {episode}", diagnostics
    )


def train(
    env: EnvSpec,
    pool: AgentPool,
    params: policy_mod.PolicyParams,
    orch_config: OrchestratorConfig,
    reward_config: RewardConfig,
    trainer_config: TrainerConfig,
    metrics_path: str | Path | None = None,
    checkpoint_dir: str | Path | None = None,
    log_writer=None,
) -> TrainingReport:
    """On-policy REINFORCE loop over simulated episodes.

    Trajectories accumulate until at least ``batch_size`` are available, then
    one ascent step theta <- theta + alpha * g is applied; a trailing partial
    batch is flushed at the end.  All randomness flows from
    ``trainer_config.seed``.
    """
    backend = SimulatedBackend(env, pool, seed=trainer_config.seed)
    start = time.perf_counter()
    writer = MetricsWriter(metrics_path, pool) if metrics_path else None
    ckpt_dir = Path(checkpoint_dir) if checkpoint_dir else None
    if ckpt_dir:
        ckpt_dir.mkdir(parents=True, exist_ok=True)

    batch: list[Trajectory] = []
    history: list[dict] = []
    recent_returns: deque[float] = deque(maxlen=trainer_config.baseline_window)
    batches_applied = 0
    try:
        for episode in range(trainer_config.episodes):
            task_rng = np.random.default_rng([trainer_config.seed, 2, episode])
            task = sample_task(env, task_rng)
            result = run_episode(
                task,
                params,
                pool,
                orch_config,
                backend,
                scorer=env.scorer,
                rng_seed=(trainer_config.seed, 3, episode),
            )
            row = _episode_row(episode, result, reward_config)
            history.append(row)
            if writer:
                writer.write(row)
            if log_writer:
                log_writer.append(episode, task, result)

            batch.extend(result.trajectories)
            if len(batch) >= trainer_config.batch_size:
                batches_applied += _apply_update(
                    batch, params, reward_config, trainer_config, recent_returns, episode
                )
                batch = []
                if ckpt_dir and batches_applied % trainer_config.checkpoint_every == 0:
                    policy_mod.save_checkpoint(
                        params, pool, ckpt_dir / f"ckpt_batch_{batches_applied:06d}.json"
                    )
        if batch:
            batches_applied += _apply_update(
                batch, params, reward_config, trainer_config, recent_returns,
                trainer_config.episodes - 1,
            )
        if ckpt_dir:
            policy_mod.save_checkpoint(params, pool, ckpt_dir / "final.json")
    finally:
        if writer:
            writer.close()

    tail = history[-100:]
    return TrainingReport(
        episodes=trainer_config.episodes,
        final_mean_reward=float(np.mean([r["reward"] for r in tail])) if tail else 0.0,
        final_mean_tokens=float(np.mean([r["tokens"] for r in tail])) if tail else 0.0,
        wall_time_s=time.perf_counter() - start,
        batches_applied=batches_applied,
        history=history,
    )


def _apply_update(
    batch: list[Trajectory],
    params: policy_mod.PolicyParams,
    reward_config: RewardConfig,
    trainer_config: TrainerConfig,
    recent_returns: deque,
    episode: int,
) -> int:
    baseline = 0.0
    if trainer_config.baseline == "moving_average" and recent_returns:
        baseline = float(np.mean(recent_returns))
    grad = batch_gradient(batch, params, reward_config, trainer_config, baseline=baseline)
    _finite_or_abort(grad, batch, episode)
    params.weights = params.weights + trainer_config.learning_rate * grad
    for traj in batch:
        recent_returns.append(trajectory_return(traj, reward_config))
    return 1


def eval_policy(
    env: EnvSpec,
    pool: AgentPool,
    params: policy_mod.PolicyParams,
    orch_config: OrchestratorConfig,
    n_episodes: int,
    seed: int = 0,
) -> dict:
    """Run frozen-policy episodes and summarize reward, cost, and selections."""
    if n_episodes == 0:
        return {"episodes": 0}
    backend = SimulatedBackend(env, pool, seed=seed)
    rewards, tokens, steps = [], [], []
    counts: dict[str, int] = {a.id: 0 for a in pool}
    for episode in range(n_episodes):
        task_rng = np.random.default_rng([seed, 2, episode])
        task = sample_task(env, task_rng)
        result = run_episode(
            task, params, pool, orch_config, backend,
            scorer=env.scorer, rng_seed=(seed, 3, episode),
        )
        rewards.append(result.terminal_reward)
        tokens.append(result.total_tokens)
        steps.append(float(np.mean([t.length for t in result.trajectories])))
        for traj in result.trajectories:
            for step in traj.steps:
                counts[step.agent_id] += 1
    non_term = {
        agent_id: c for agent_id, c in counts.items() if agent_id != pool.terminator.id
    }
    total_non_term = sum(non_term.values())
    return {
        "episodes": n_episodes,
        "mean_reward": float(np.mean(rewards)),
        "mean_tokens": float(np.mean(tokens)),
        "mean_steps": float(np.mean(steps)),
        "selection_counts": counts,
        "selection_share_non_terminator": {
            agent_id: (c / total_non_term if total_non_term else 0.0)
            for agent_id, c in non_term.items()
        },
    }
