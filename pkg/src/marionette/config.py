"""Run configuration: parse, validate with field-path diagnostics, serialize.

A run selects exactly one backend: a simulated environment (``env``) or a
remote endpoint (``remote``).  Builtin env kinds bundle their own pool;
``custom`` envs are built against the explicitly configured pool.  The remote
API key is never part of the config file; it comes from the environment.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .agents import AgentPool, AgentSpec, PoolConfig, build_pool
from .envs import ENV_FACTORIES, EnvSpec, LATENT_MODELS, SimProfile, validate_env_pool
from .errors import ConfigurationError
from .gateway import RemoteBackendConfig
from .orchestrator import OrchestratorConfig
from .trainer import RewardConfig, TrainerConfig

LOG_LEVELS = ("debug", "info", "warning", "error")


@dataclass
class EnvConfig:
    kind: str
    params: dict = field(default_factory=dict)
    # inline definition used when kind == "custom"
    latent_model: str | None = None
    profiles: dict[str, dict] = field(default_factory=dict)
    routes: list[list[str]] = field(default_factory=list)
    scorer: str = "exact"
    n_tasks: int = 50


@dataclass
class RunConfig:
    seed: int = 0
    out_dir: str = "runs/default"
    log_level: str = "info"
    pool: PoolConfig | None = None
    env: EnvConfig | None = None
    remote: RemoteBackendConfig | None = None
    orchestrator: OrchestratorConfig = field(default_factory=OrchestratorConfig)
    reward: RewardConfig = field(default_factory=RewardConfig)
    trainer: TrainerConfig = field(default_factory=TrainerConfig)


class _Collector:
    def __init__(self) -> None:
        self.errors: list[tuple[str, str]] = []

    def add(self, path: str, message: str) -> None:
        self.errors.append((path, message))

    def raise_if_any(self) -> None:
        if self.errors:
            detail = "; ".join(f"{path}: {message}" for path, message in self.errors)
            raise ConfigurationError(f"invalid config: {detail}", field_errors=self.errors)


def _take(obj: dict, key: str, default):
    return obj[key] if key in obj else default


def _build_section(cls, obj: dict, path: str, errors: _Collector, rename: dict | None = None):
    rename = rename or {}
    kwargs = {}
    for key, value in obj.items():
        kwargs[rename.get(key, key)] = value
    try:
        return cls(**kwargs)
    except TypeError as exc:
        errors.add(path, f"unexpected or missing fields ({exc})")
    except ConfigurationError as exc:
        errors.add(path, str(exc))
    return None


def parse_config(source: str | Path | dict) -> RunConfig:
    """Parse and validate a run config from a JSON file or a dict."""
    if isinstance(source, (str, Path)):
        try:
            raw = json.loads(Path(source).read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigurationError(f"cannot read config file: {exc}")
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config is not valid JSON: {exc}")
    else:
        raw = dict(source)
    if not isinstance(raw, dict):
        raise ConfigurationError("config root must be a JSON object")

    errors = _Collector()
    cfg = RunConfig()

    cfg.seed = _take(raw, "seed", 0)
    if not isinstance(cfg.seed, int):
        errors.add("seed", "must be an integer")
        cfg.seed = 0
    cfg.out_dir = _take(raw, "out_dir", "runs/default")
    cfg.log_level = _take(raw, "log_level", "info")
    if cfg.log_level not in LOG_LEVELS:
        errors.add("log_level", f"must be one of {LOG_LEVELS}")

    if "pool" in raw and raw["pool"] is not None:
        cfg.pool = _parse_pool(raw["pool"], errors)

    env_raw = raw.get("env")
    remote_raw = raw.get("remote")
    if (env_raw is None) == (remote_raw is None):
        errors.add("env|remote", "exactly one backend (simulated env xor remote) must be selected")
    if env_raw is not None:
        cfg.env = _parse_env(env_raw, errors)
    if remote_raw is not None:
        cfg.remote = _build_section(RemoteBackendConfig, remote_raw, "remote", errors)
        if cfg.remote is not None and cfg.pool is None:
            errors.add("pool", "a remote backend requires an explicit pool")

    orch_raw = dict(raw.get("orchestrator", {}))
    orch_raw.setdefault("seed", cfg.seed)
    orch = _build_section(OrchestratorConfig, orch_raw, "orchestrator", errors)
    if orch is not None:
        cfg.orchestrator = orch

    reward_raw = dict(raw.get("reward", {}))
    if reward_raw.get("phi") is None:
        reward_raw["phi"] = cfg.orchestrator.max_depth  # default: the depth budget
    reward = _build_section(
        RewardConfig, reward_raw, "reward", errors, rename={"lambda": "lam"}
    )
    if reward is not None:
        cfg.reward = reward

    trainer_raw = dict(raw.get("trainer", {}))
    trainer_raw.setdefault("seed", cfg.seed)
    trainer = _build_section(TrainerConfig, trainer_raw, "trainer", errors)
    if trainer is not None:
        cfg.trainer = trainer

    if cfg.env is not None and cfg.env.kind == "custom":
        if cfg.pool is None:
            errors.add("pool", "a custom env requires an explicit pool")
        if cfg.env.latent_model not in LATENT_MODELS:
            errors.add("env.latent_model", f"must be one of {LATENT_MODELS}")
        if cfg.env.latent_model == "chain" and not cfg.env.routes:
            errors.add("env.routes", "chain envs need at least one route")
    if cfg.env is not None and cfg.env.kind != "custom" and cfg.env.kind not in ENV_FACTORIES:
        errors.add("env.kind", f"unknown kind; expected 'custom' or one of {sorted(ENV_FACTORIES)}")

    errors.raise_if_any()
    return cfg


def _parse_pool(obj: dict, errors: _Collector) -> PoolConfig | None:
    if not isinstance(obj, dict) or "agents" not in obj:
        errors.add("pool", "must be an object with an 'agents' list")
        return None
    agents = []
    for i, item in enumerate(obj["agents"]):
        try:
            agents.append(AgentSpec.from_jsonable(item))
        except (ConfigurationError, KeyError, ValueError) as exc:
            errors.add(f"pool.agents[{i}]", str(exc))
    if not agents:
        errors.add("pool.agents", "must list at least one agent")
        return None
    return PoolConfig(agents=tuple(agents), auto_terminator=obj.get("auto_terminator", True))


def _parse_env(obj: dict, errors: _Collector) -> EnvConfig | None:
    if not isinstance(obj, dict) or "kind" not in obj:
        errors.add("env", "must be an object with a 'kind'")
        return None
    cfg = EnvConfig(kind=obj["kind"])
    cfg.params = dict(obj.get("params", {}))
    cfg.latent_model = obj.get("latent_model")
    cfg.profiles = dict(obj.get("profiles", {}))
    cfg.routes = [list(r) for r in obj.get("routes", [])]
    cfg.scorer = obj.get("scorer", "exact")
    cfg.n_tasks = int(obj.get("n_tasks", 50))
    return cfg


def build_backend_objects(cfg: RunConfig) -> tuple[AgentPool, EnvSpec]:
    """Materialize the pool and env of a simulated run."""
    if cfg.env is None:
        raise ConfigurationError("config selects no simulated env")
    if cfg.env.kind != "custom":
        if cfg.pool is not None:
            raise ConfigurationError(
                f"builtin env kind {cfg.env.kind!r} bundles its own pool; drop the 'pool' section "
                "or use kind 'custom'"
            )
        pool, env = ENV_FACTORIES[cfg.env.kind](**cfg.env.params)
        return pool, env

    pool = build_pool(cfg.pool)
    profiles = {
        agent_id: SimProfile(
            improve_prob=float(p.get("improve_prob", 0.0)),
            degrade_prob=float(p.get("degrade_prob", 0.0)),
            emit_cost=float(p.get("emit_cost", 0.0)),
        )
        for agent_id, p in cfg.env.profiles.items()
    }
    env = EnvSpec(
        name="custom",
        latent_model=cfg.env.latent_model,
        profile_map=profiles,
        scorer=cfg.env.scorer,
        n_tasks=cfg.env.n_tasks,
        routes=tuple(tuple(r) for r in cfg.env.routes),
    )
    validate_env_pool(env, pool)
    return pool, env


def serialize_config(cfg: RunConfig) -> dict:
    """Inverse of :func:`parse_config` up to semantic equality."""
    out: dict = {
        "seed": cfg.seed,
        "out_dir": cfg.out_dir,
        "log_level": cfg.log_level,
        "orchestrator": {
            "max_depth": cfg.orchestrator.max_depth,
            "width": cfg.orchestrator.width,
            "min_steps": cfg.orchestrator.min_steps,
            "seed": cfg.orchestrator.seed,
        },
        "reward": {
            "lambda": cfg.reward.lam,
            "gamma": cfg.reward.gamma,
            "phi": cfg.reward.phi,
            "cost_scale_mode": cfg.reward.cost_scale_mode,
            "global_cost": cfg.reward.global_cost,
        },
        "trainer": {
            "learning_rate": cfg.trainer.learning_rate,
            "batch_size": cfg.trainer.batch_size,
            "episodes": cfg.trainer.episodes,
            "baseline": cfg.trainer.baseline,
            "baseline_window": cfg.trainer.baseline_window,
            "checkpoint_every": cfg.trainer.checkpoint_every,
            "per_step_returns": cfg.trainer.per_step_returns,
            "seed": cfg.trainer.seed,
        },
    }
    if cfg.pool is not None:
        out["pool"] = {
            "agents": [a.to_jsonable() for a in cfg.pool.agents],
            "auto_terminator": cfg.pool.auto_terminator,
        }
    if cfg.env is not None:
        env_out: dict = {"kind": cfg.env.kind}
        if cfg.env.params:
            env_out["params"] = cfg.env.params
        if cfg.env.kind == "custom":
            env_out.update(
                {
                    "latent_model": cfg.env.latent_model,
                    "profiles": cfg.env.profiles,
                    "routes": cfg.env.routes,
                    "scorer": cfg.env.scorer,
                    "n_tasks": cfg.env.n_tasks,
                }
            )
        out["env"] = env_out
    if cfg.remote is not None:
        out["remote"] = {
            "endpoint": cfg.remote.endpoint,
            "temperature": cfg.remote.temperature,
            "max_tokens": cfg.remote.max_tokens,
            "timeout_s": cfg.remote.timeout_s,
            "max_retries": cfg.remote.max_retries,
            "backoff_base_s": cfg.remote.backoff_base_s,
            "max_in_flight": cfg.remote.max_in_flight,
            "agent_temperatures": cfg.remote.agent_temperatures,
        }
    return out
