"""Episode engine.

Maintains the global branch state, queries the policy for the next agent,
dispatches execution to a backend, enforces width/depth budgets and the
stopping rule, and aggregates branch answers by majority vote.

Budget semantics: a trajectory is the full decision sequence including the
final terminator selection, so T <= max_depth and at most max_depth - 1
agents actually execute per branch.  Decision times are 1-based (the agent
chosen at list index i acts at time t = i + 1), which is the indexing the
return recursion in the trainer relies on.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from . import policy as policy_mod
from .agents import AgentOutput, AgentPool, AgentSpec
from .errors import ConfigurationError, ContractError, EpisodeError, GatewayError, ReplayMismatchError
from .scoring import Scorer, normalize_answer, resolve_scorer

logger = logging.getLogger(__name__)

ANSWER_MARKER = "FINAL ANSWER:"


@dataclass(frozen=True)
class TaskSpec:
    """A unit of work: the conditioning input of every policy decision."""

    id: str
    text: str
    ground_truth: str | None = None
    domain: str = "closed"

    def __post_init__(self) -> None:
        if self.domain not in ("closed", "open"):
            raise ConfigurationError(f"task {self.id!r}: domain must be 'closed' or 'open'")
        if self.domain == "closed" and self.ground_truth is None:
            raise ConfigurationError(f"task {self.id!r}: closed-domain tasks carry ground_truth")

    def to_jsonable(self) -> dict:
        return {
            "id": self.id,
            "text": self.text,
            "ground_truth": self.ground_truth,
            "domain": self.domain,
        }


@dataclass(frozen=True)
class StepRecord:
    agent_index: int
    agent_id: str
    text: str
    tokens: int
    latent_correct: bool


def state_digest(task_id: str, steps: Sequence[StepRecord]) -> str:
    """Collision-free hash of the task id and the ordered (agent, output) pairs."""
    payload = json.dumps(
        [task_id, [[rec.agent_id, rec.text] for rec in steps]],
        separators=(",", ":"),
    )
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()


@dataclass(frozen=True)
class SystemState:
    """Branch-local view of the episode: task, step history, digest."""

    task: TaskSpec
    branch_id: int = 0
    steps: tuple[StepRecord, ...] = ()
    digest: str = field(init=False, default="")

    def __post_init__(self) -> None:
        object.__setattr__(self, "digest", state_digest(self.task.id, self.steps))

    @property
    def step_count(self) -> int:
        return len(self.steps)

    @property
    def latent_correct(self) -> bool:
        return self.steps[-1].latent_correct if self.steps else False

    def advance(self, record: StepRecord) -> "SystemState":
        return SystemState(task=self.task, branch_id=self.branch_id, steps=self.steps + (record,))


@dataclass(frozen=True)
class OrchestratorConfig:
    """Episode budgets: depth bounds chain length, width bounds parallel branches."""

    max_depth: int = 4
    width: int = 3
    min_steps: int = 1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.max_depth < 1:
            raise ConfigurationError("max_depth must be >= 1")
        if self.width < 1:
            raise ConfigurationError("width must be >= 1")
        if self.min_steps < 0:
            raise ConfigurationError("min_steps must be >= 0")


class AgentBackend(Protocol):
    """Anything that can execute a non-terminator agent against a state."""

    def run(self, agent: AgentSpec, state: SystemState) -> AgentOutput: ...


@dataclass(eq=False)
class TrajectoryStep:
    """One decision plus its execution record; the unit the trainer consumes."""

    t: int  # 1-based decision time within the branch
    agent_index: int
    agent_id: str
    text: str
    tokens: int
    log_prob: float
    forced: bool
    cost_factor: float
    latent_correct: bool
    features: np.ndarray
    mask: np.ndarray
    digest_before: str
    digest_after: str
    grad_cache: np.ndarray | None = None


@dataclass(eq=False)
class Trajectory:
    """One branch of an episode: the REINFORCE sample unit."""

    branch_id: int
    steps: list[TrajectoryStep]
    answer: str = ""
    terminal_reward: float = 0.0
    params_fingerprint: str = ""

    @property
    def length(self) -> int:
        return len(self.steps)

    def agent_ids(self, *, drop_last: bool = False) -> list[str]:
        ids = [s.agent_id for s in self.steps]
        return ids[:-1] if drop_last else ids


@dataclass(eq=False)
class EpisodeResult:
    trajectories: list[Trajectory]
    final_answer: str
    terminal_reward: float
    total_tokens: int

    def to_jsonable(self) -> dict:
        return {
            "final_answer": self.final_answer,
            "terminal_reward": self.terminal_reward,
            "total_tokens": self.total_tokens,
            "trajectories": [
                {
                    "branch_id": t.branch_id,
                    "answer": t.answer,
                    "steps": [
                        {
                            "t": s.t,
                            "agent_id": s.agent_id,
                            "text": s.text,
                            "tokens": s.tokens,
                            "log_prob": s.log_prob,
                            "forced": s.forced,
                            "digest_before": s.digest_before,
                            "digest_after": s.digest_after,
                        }
                        for s in t.steps
                    ],
                }
                for t in self.trajectories
            ],
        }


@dataclass(eq=False)
class StepOutcome:
    action_index: int
    log_prob: float
    state: SystemState
    forced: bool
    features: np.ndarray
    mask: np.ndarray
    text: str
    tokens: int


def eligibility_mask(pool: AgentPool, config: OrchestratorConfig, step_count: int) -> np.ndarray:
    """Who may be selected at this decision point.

    The terminator is masked out before ``min_steps`` by zeroing its
    probability (exact log-probs, no rejection sampling); once only one
    decision remains in the depth budget the terminator is the sole choice.
    """
    mask = np.ones(len(pool), dtype=bool)
    if step_count >= config.max_depth - 1:
        mask[:] = False
        mask[pool.terminator_index] = True
    elif step_count < config.min_steps:
        mask[pool.terminator_index] = False
    return mask


def step(
    state: SystemState,
    params: policy_mod.PolicyParams,
    pool: AgentPool,
    config: OrchestratorConfig,
    backend: AgentBackend,
    rng: np.random.Generator,
) -> StepOutcome:
    """Sample one agent, execute it, and return the advanced state.

    A budget-forced terminator selection is not a policy choice: it is taken
    with probability one, reported with log_prob 0, and flagged ``forced`` so
    the trainer excludes it from the score sum.
    """
    if state.step_count >= config.max_depth:
        raise ContractError("state has exhausted the depth budget")
    features = policy_mod.featurize(state, state.task, pool, config.max_depth)
    expected = (len(pool), len(features))
    if params.weights.shape != expected:
        raise ContractError(
            f"policy shape {params.weights.shape} does not match pool/basis {expected}"
        )

    forced = state.step_count >= config.max_depth - 1
    mask = eligibility_mask(pool, config, state.step_count)
    if forced:
        action, log_prob = pool.terminator_index, 0.0
    else:
        action, log_prob = policy_mod.sample_action(params, features, mask, rng)

    agent = pool.agents[action]
    if action == pool.terminator_index:
        text, tokens, latent = "", 0, state.latent_correct
    else:
        output = backend.run(agent, state)
        latent = state.latent_correct if output.latent_delta == 0 else output.latent_delta > 0
        text, tokens = output.text, output.tokens

    record = StepRecord(
        agent_index=action, agent_id=agent.id, text=text, tokens=tokens, latent_correct=latent
    )
    return StepOutcome(
        action_index=action,
        log_prob=log_prob,
        state=state.advance(record),
        forced=forced,
        features=features.values,
        mask=mask,
        text=text,
        tokens=tokens,
    )


def extract_answer(texts: Sequence[str]) -> str:
    """Branch answer: the substring after the last answer marker, else the
    final non-empty output as a whole."""
    for text in reversed(texts):
        pos = text.rfind(ANSWER_MARKER)
        if pos >= 0:
            return text[pos + len(ANSWER_MARKER):].strip()
    for text in reversed(texts):
        if text.strip():
            return text.strip()
    return ""


def majority_vote(answers: Sequence[str]) -> str:
    """Modal answer after normalization; ties break toward the earliest branch."""
    if not answers:
        raise ContractError("majority_vote requires at least one answer")
    counts: dict[str, int] = {}
    for answer in answers:
        key = normalize_answer(answer)
        counts[key] = counts.get(key, 0) + 1
    best = max(counts.values())
    for answer in answers:  # earliest index wins among modal answers
        if counts[normalize_answer(answer)] == best:
            return answer.strip()
    raise AssertionError("unreachable")


def _run_branch(
    task: TaskSpec,
    branch_id: int,
    params: policy_mod.PolicyParams,
    pool: AgentPool,
    config: OrchestratorConfig,
    backend: AgentBackend,
    rng: np.random.Generator,
) -> Trajectory:
    state = SystemState(task=task, branch_id=branch_id)
    steps: list[TrajectoryStep] = []
    while True:
        digest_before = state.digest
        outcome = step(state, params, pool, config, backend, rng)
        agent = pool.agents[outcome.action_index]
        steps.append(
            TrajectoryStep(
                t=len(steps) + 1,
                agent_index=outcome.action_index,
                agent_id=agent.id,
                text=outcome.text,
                tokens=outcome.tokens,
                log_prob=outcome.log_prob,
                forced=outcome.forced,
                cost_factor=agent.cost_factor,
                latent_correct=outcome.state.latent_correct,
                features=outcome.features,
                mask=outcome.mask,
                digest_before=digest_before,
                digest_after=outcome.state.digest,
            )
        )
        state = outcome.state
        if outcome.action_index == pool.terminator_index:
            return Trajectory(
                branch_id=branch_id, steps=steps, params_fingerprint=params.fingerprint()
            )


def run_episode(
    task: TaskSpec,
    params: policy_mod.PolicyParams,
    pool: AgentPool,
    config: OrchestratorConfig,
    backend: AgentBackend,
    scorer: Scorer | str | None = None,
    rng_seed: int | Sequence[int] | None = None,
) -> EpisodeResult:
    """Run ``width`` independent branches and aggregate their answers.

    Every branch is its own decision chain ending in a terminator selection;
    branch answers are merged by :func:`majority_vote` and the episode reward
    (shared by all branch trajectories) comes from the task scorer.
    """
    score = resolve_scorer(scorer, task.domain)
    base = config.seed if rng_seed is None else rng_seed
    base_parts = list(base) if isinstance(base, (list, tuple)) else [base]

    trajectories: list[Trajectory] = []
    for branch_id in range(config.width):
        rng = np.random.default_rng(base_parts + [branch_id])
        try:
            trajectories.append(
                _run_branch(task, branch_id, params, pool, config, backend, rng)
            )
        except GatewayError as exc:
            logger.warning("branch %d failed after retries: %s", branch_id, exc)
    if not trajectories:
        raise EpisodeError(f"all {config.width} branches failed for task {task.id!r}")

    for trajectory in trajectories:
        trajectory.answer = extract_answer([s.text for s in trajectory.steps])
    final_answer = majority_vote([t.answer for t in trajectories])
    reward = float(np.clip(score(final_answer, task), 0.0, 1.0))
    for trajectory in trajectories:
        trajectory.terminal_reward = reward

    total_tokens = sum(s.tokens for t in trajectories for s in t.steps)
    return EpisodeResult(
        trajectories=trajectories,
        final_answer=final_answer,
        terminal_reward=reward,
        total_tokens=total_tokens,
    )


def replay(
    trajectories: Sequence[Trajectory],
    task: TaskSpec,
    pool: AgentPool,
    backend: AgentBackend,
    scorer: Scorer | str | None = None,
) -> EpisodeResult:
    """Re-execute recorded action sequences through a simulated backend.

    Verifies that every step reproduces the recorded output, token count, and
    digests; any divergence raises :class:`ReplayMismatchError` naming the
    branch and step.  An empty log replays to an empty result.
    """
    if not trajectories:
        return EpisodeResult(trajectories=[], final_answer="", terminal_reward=0.0, total_tokens=0)
    score = resolve_scorer(scorer, task.domain)

    replayed: list[Trajectory] = []
    for recorded in trajectories:
        state = SystemState(task=task, branch_id=recorded.branch_id)
        steps: list[TrajectoryStep] = []
        for i, rec_step in enumerate(recorded.steps):
            if rec_step.digest_before != state.digest:
                raise ReplayMismatchError(recorded.branch_id, i, "digest_before diverged")
            agent = pool.agents[rec_step.agent_index]
            if rec_step.agent_index == pool.terminator_index:
                text, tokens, latent = "", 0, state.latent_correct
            else:
                output = backend.run(agent, state)
                text, tokens = output.text, output.tokens
                latent = state.latent_correct if output.latent_delta == 0 else output.latent_delta > 0
            if text != rec_step.text:
                raise ReplayMismatchError(recorded.branch_id, i, "output text diverged")
            if tokens != rec_step.tokens:
                raise ReplayMismatchError(recorded.branch_id, i, "token count diverged")
            state = state.advance(
                StepRecord(
                    agent_index=rec_step.agent_index,
                    agent_id=agent.id,
                    text=text,
                    tokens=tokens,
                    latent_correct=latent,
                )
            )
            if rec_step.digest_after != state.digest:
                raise ReplayMismatchError(recorded.branch_id, i, "digest_after diverged")
            steps.append(
                TrajectoryStep(
                    t=i + 1,
                    agent_index=rec_step.agent_index,
                    agent_id=agent.id,
                    text=text,
                    tokens=tokens,
                    log_prob=rec_step.log_prob,
                    forced=rec_step.forced,
                    cost_factor=agent.cost_factor,
                    latent_correct=latent,
                    features=rec_step.features,
                    mask=rec_step.mask,
                    digest_before=rec_step.digest_before,
                    digest_after=state.digest,
                )
            )
        replayed.append(
            Trajectory(
                branch_id=recorded.branch_id,
                steps=steps,
                params_fingerprint=recorded.params_fingerprint,
            )
        )

    for trajectory in replayed:
        trajectory.answer = extract_answer([s.text for s in trajectory.steps])
    final_answer = majority_vote([t.answer for t in replayed])
    reward = float(np.clip(score(final_answer, task), 0.0, 1.0))
    for trajectory in replayed:
        trajectory.terminal_reward = reward
    total_tokens = sum(s.tokens for t in replayed for s in t.steps)
    return EpisodeResult(
        trajectories=replayed,
        final_answer=final_answer,
        terminal_reward=reward,
        total_tokens=total_tokens,
    )
