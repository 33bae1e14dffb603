"""Linear-softmax selection policy over pool agents.

The policy scores every agent with a per-agent weight vector over a fixed
hand-built feature basis and samples from the masked softmax.  Log
probabilities and the score function are computed analytically, which keeps
the gradient exactly differentiable and dependency-free.  Richer scorers can
be swapped in behind the same (features, mask) -> distribution surface.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np

from .agents import AgentPool
from .errors import CheckpointMismatchError, ConfigurationError, ContractError

if TYPE_CHECKING:
    from .orchestrator import SystemState, TaskSpec

HASH_BUCKETS = 16
CHECKPOINT_FORMAT = "marionette-policy"
CHECKPOINT_VERSION = 1


def feature_length(pool_size: int) -> int:
    # bias + step fraction + counts + last one-hot + costs + domain flag + hashed text
    return 1 + 1 + 3 * pool_size + 1 + HASH_BUCKETS


@dataclass(frozen=True)
class FeatureVector:
    """Fixed-length observation of (state, task, pool statics)."""

    values: np.ndarray

    def __post_init__(self) -> None:
        vals = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", vals)
        if vals.ndim != 1:
            raise ContractError("feature vector must be one-dimensional")
        if not np.all(np.isfinite(vals)):
            raise ContractError("feature vector contains non-finite values")

    def __len__(self) -> int:
        return int(self.values.shape[0])


def hashed_text_features(text: str) -> np.ndarray:
    """Signed 16-bucket feature hashing of whitespace tokens.

    Stable across processes (md5-based, no tokenizer); scaled by token count
    so values stay in [-1, 1].
    """
    out = np.zeros(HASH_BUCKETS, dtype=np.float64)
    tokens = text.split()
    for token in tokens:
        digest = hashlib.md5(token.encode("utf-8")).digest()
        bucket = digest[0] % HASH_BUCKETS
        sign = 1.0 if digest[1] & 1 else -1.0
        out[bucket] += sign
    if tokens:
        out /= len(tokens)
    return out


def featurize(
    state: "SystemState", task: "TaskSpec", pool: AgentPool, max_depth: int
) -> FeatureVector:
    """Build the policy observation for one branch state.

    Deterministic in the state digest: everything here is derived from the
    task, the ordered (agent, output) step records, and pool statics, all of
    which the digest covers.  The branch id is deliberately excluded.
    """
    p = len(pool)
    counts = np.zeros(p, dtype=np.float64)
    last = np.zeros(p, dtype=np.float64)
    for record in state.steps:
        counts[record.agent_index] += 1.0
    if state.steps:
        last[state.steps[-1].agent_index] = 1.0

    costs = np.array([a.cost_factor for a in pool], dtype=np.float64)
    max_cost = costs.max()
    if max_cost > 0:
        costs = costs / max_cost

    values = np.concatenate(
        [
            [1.0],
            [state.step_count / max_depth],
            counts / max_depth,
            last,
            costs,
            [1.0 if task.domain == "closed" else 0.0],
            hashed_text_features(task.text),
        ]
    )
    return FeatureVector(values=values)


@dataclass
class PolicyParams:
    """Policy weights (one row per pool agent) plus softmax temperature."""

    weights: np.ndarray
    temperature: float = 1.0

    def __post_init__(self) -> None:
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.ndim != 2:
            raise ConfigurationError("policy weights must be a 2-D matrix")
        if not np.all(np.isfinite(self.weights)):
            raise ConfigurationError("policy weights must be finite")
        if not (self.temperature > 0):
            raise ConfigurationError("temperature must be positive")

    @property
    def pool_size(self) -> int:
        return int(self.weights.shape[0])

    def fingerprint(self) -> str:
        h = hashlib.sha256()
        h.update(str(self.weights.shape).encode())
        h.update(self.weights.tobytes())
        h.update(repr(self.temperature).encode())
        return h.hexdigest()

    def copy(self) -> "PolicyParams":
        return PolicyParams(weights=self.weights.copy(), temperature=self.temperature)


def init_params(pool: AgentPool, temperature: float = 1.0) -> PolicyParams:
    """Zero-initialized weights: the starting policy is uniform over unmasked agents."""
    shape = (len(pool), feature_length(len(pool)))
    return PolicyParams(weights=np.zeros(shape, dtype=np.float64), temperature=temperature)


def _feature_values(features: FeatureVector | np.ndarray) -> np.ndarray:
    return features.values if isinstance(features, FeatureVector) else np.asarray(features, dtype=np.float64)


def _check_shapes(params: PolicyParams, x: np.ndarray, mask: np.ndarray) -> None:
    n, d = params.weights.shape
    if x.shape != (d,):
        raise ContractError(f"feature length {x.shape} does not match policy width {d}")
    if mask.shape != (n,):
        raise ContractError(f"mask length {mask.shape} does not match pool size {n}")


def masked_log_probs(
    params: PolicyParams, features: FeatureVector | np.ndarray, mask: np.ndarray
) -> np.ndarray:
    """Log softmax of w_k.x / temperature over unmasked agents; -inf where masked."""
    x = _feature_values(features)
    mask = np.asarray(mask, dtype=bool)
    _check_shapes(params, x, mask)
    if not mask.any():
        raise ContractError("at least one agent must be unmasked")
    logits = params.weights @ x / params.temperature
    # shift by the unmasked max before exponentiation for numeric stability
    shifted = logits[mask] - logits[mask].max()
    log_norm = np.log(np.exp(shifted).sum())
    out = np.full(mask.shape, -np.inf, dtype=np.float64)
    out[mask] = shifted - log_norm
    return out


def action_distribution(
    params: PolicyParams, features: FeatureVector | np.ndarray, mask: np.ndarray
) -> np.ndarray:
    """Probability vector over the pool: masked entries are exactly zero."""
    log_probs = masked_log_probs(params, features, mask)
    probs = np.zeros(log_probs.shape, dtype=np.float64)
    live = log_probs > -np.inf
    probs[live] = np.exp(log_probs[live])
    return probs


def log_prob_grad(
    params: PolicyParams,
    features: FeatureVector | np.ndarray,
    mask: np.ndarray,
    action: int,
) -> np.ndarray:
    """d log pi(action) / d weights, analytically.

    Row k receives x * (1{k == action} - p_k) / temperature; masked rows are
    exactly zero.
    """
    x = _feature_values(features)
    mask = np.asarray(mask, dtype=bool)
    if not mask[action]:
        raise ContractError(f"action {action} is masked")
    probs = action_distribution(params, x, mask)
    coeff = -probs
    coeff[action] += 1.0
    coeff[~mask] = 0.0
    return np.outer(coeff, x) / params.temperature


def sample_action(
    params: PolicyParams,
    features: FeatureVector | np.ndarray,
    mask: np.ndarray,
    rng: np.random.Generator,
) -> tuple[int, float]:
    """Draw one agent index from the masked softmax; returns (index, log prob)."""
    log_probs = masked_log_probs(params, features, mask)
    probs = action_distribution(params, features, mask)
    action = int(rng.choice(probs.shape[0], p=probs / probs.sum()))
    return action, float(log_probs[action])


def save_checkpoint(params: PolicyParams, pool: AgentPool, path: str | Path) -> None:
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "pool_fingerprint": pool.fingerprint(),
        "pool_size": len(pool),
        "feature_length": int(params.weights.shape[1]),
        "temperature": params.temperature,
        "weights": params.weights.tolist(),
    }
    Path(path).write_text(json.dumps(payload), encoding="utf-8")


def load_checkpoint(path: str | Path, pool: AgentPool) -> PolicyParams:
    """Load a checkpoint, verifying it was written for this exact pool."""
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read checkpoint {path}: {exc}") from exc
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path} is not a policy checkpoint")
    if payload.get("pool_fingerprint") != pool.fingerprint():
        raise CheckpointMismatchError(
            f"checkpoint {path} was written for a different pool "
            f"(fingerprint {payload.get('pool_fingerprint')!r})"
        )
    weights = np.asarray(payload["weights"], dtype=np.float64)
    expected = (len(pool), feature_length(len(pool)))
    if weights.shape != expected:
        raise CheckpointMismatchError(
            f"checkpoint weight shape {weights.shape} does not match pool shape {expected}"
        )
    return PolicyParams(weights=weights, temperature=float(payload["temperature"]))
