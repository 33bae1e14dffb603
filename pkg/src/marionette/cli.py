"""Operator surface: train, eval, analyze, and replay subcommands.

Exit codes: 0 success, 1 runtime failure, 2 config error, 3 checkpoint
mismatch.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import policy as policy_mod
from . import topology
from .config import RunConfig, build_backend_objects, parse_config, serialize_config
from .envs import SimulatedBackend, task_for_index
from .episode_log import EpisodeLogWriter, read_episode_log
from .errors import (
    CheckpointMismatchError,
    ConfigurationError,
    MarionetteError,
    ReplayMismatchError,
)
from .trainer import eval_policy, train

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_CONFIG = 2
EXIT_CHECKPOINT = 3


def _load_config(args: argparse.Namespace) -> RunConfig:
    cfg = parse_config(args.config)
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "seed", None) is not None:
        cfg = _override_seed(cfg, args.seed)
    if getattr(args, "episodes", None) is not None:
        from dataclasses import replace

        cfg.trainer = replace(cfg.trainer, episodes=args.episodes)
    logging.basicConfig(level=getattr(logging, cfg.log_level.upper()))
    return cfg


def _override_seed(cfg: RunConfig, seed: int) -> RunConfig:
    from dataclasses import replace

    cfg.seed = seed
    cfg.trainer = replace(cfg.trainer, seed=seed)
    cfg.orchestrator = replace(cfg.orchestrator, seed=seed)
    return cfg


def _require_simulated(cfg: RunConfig) -> None:
    if cfg.env is None:
        raise ConfigurationError(
            "this command needs a simulated env; remote execution is available "
            "through the library API (marionette.gateway.RemoteBackend)"
        )


def cmd_train(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    _require_simulated(cfg)
    pool, env = build_backend_objects(cfg)
    out_dir = Path(cfg.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    params = policy_mod.init_params(pool)
    log_writer = EpisodeLogWriter(out_dir / "episodes.jsonl")
    try:
        report = train(
            env,
            pool,
            params,
            cfg.orchestrator,
            cfg.reward,
            cfg.trainer,
            metrics_path=out_dir / "metrics.csv",
            checkpoint_dir=out_dir / "checkpoints",
            log_writer=log_writer,
        )
    finally:
        log_writer.close()
    (out_dir / "report.json").write_text(
        json.dumps(report.to_jsonable(), indent=2) + "\n", encoding="utf-8"
    )
    (out_dir / "config.json").write_text(
        json.dumps(serialize_config(cfg), indent=2) + "\n", encoding="utf-8"
    )
    print(json.dumps(report.to_jsonable()))
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _load_config(args)
    _require_simulated(cfg)
    pool, env = build_backend_objects(cfg)
    params = policy_mod.load_checkpoint(args.checkpoint, pool) if args.checkpoint else policy_mod.init_params(pool)
    summary = eval_policy(
        env, pool, params, cfg.orchestrator,
        n_episodes=args.episodes if args.episodes is not None else 100,
        seed=cfg.seed,
    )
    text = json.dumps(summary, indent=2) + "\n"
    if getattr(args, "out", None):
        Path(args.out).write_text(text, encoding="utf-8")
    print(text, end="")
    return EXIT_OK


def cmd_analyze(args: argparse.Namespace) -> int:
    episodes, warnings = read_episode_log(args.log)
    out_dir = Path(args.out) if args.out else Path(args.log).parent
    out_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    graphs = {}
    for episode in episodes:
        sequences = []
        for branch in sorted(episode.branches):
            steps = episode.branches[branch]
            # the final step of a branch is the terminator selection
            sequences.append([s.agent_id for s in steps[:-1]])
        graph = topology.fold_sequences(sequences)
        graphs[episode.episode_id] = graph
        m = topology.metrics(graph)
        rows.append((episode.episode_id, m))

    density_trend = topology.trend_series(
        [(eid, m.density) for eid, m in rows], window=args.window
    ) if rows else []
    cycle_trend = topology.trend_series(
        [(eid, float(m.simple_cycle_count)) for eid, m in rows], window=args.window
    ) if rows else []

    csv_path = out_dir / "analysis.csv"
    with csv_path.open("w", encoding="utf-8") as fh:
        fh.write(
            "episode,nodes,edges,edge_multiplicity,density,simple_cycles,"
            "cycles_saturated,self_loops,motif,density_trend,cycles_trend\n"
        )
        for (eid, m), (_, dtrend), (_, ctrend) in zip(rows, density_trend, cycle_trend):
            fh.write(
                f"{eid},{m.node_count},{m.edge_count},{m.edge_multiplicity},"
                f"{m.density!r},{m.simple_cycle_count},{int(m.cycles_saturated)},"
                f"{m.self_loop_count},{m.motif},{dtrend!r},{ctrend!r}\n"
            )

    for episode_id in args.dot or []:
        if episode_id not in graphs:
            logger.warning("episode %d not present in log; no DOT written", episode_id)
            continue
        (out_dir / f"episode_{episode_id}.dot").write_text(
            topology.to_dot(graphs[episode_id], name=f"episode_{episode_id}"), encoding="utf-8"
        )

    print(json.dumps({"episodes": len(rows), "warnings": warnings, "csv": str(csv_path)}))
    return EXIT_OK


def cmd_replay(args: argparse.Namespace) -> int:
    """Verify a logged run is reproducible: re-execute every logged action
    through the simulated backend and compare digests, tokens, and rewards."""
    cfg = _load_config(args)
    _require_simulated(cfg)
    pool, env = build_backend_objects(cfg)
    backend = SimulatedBackend(env, pool, seed=cfg.trainer.seed)
    episodes, warnings = read_episode_log(args.log)

    from .envs import score as env_score
    from .orchestrator import StepRecord, SystemState, extract_answer

    checked = 0
    for episode in episodes:
        task = _task_from_id(env, episode.task_id)
        if task is None:
            continue
        answers = []
        for branch in sorted(episode.branches):
            state = SystemState(task=task, branch_id=branch)
            for i, logged in enumerate(episode.branches[branch]):
                if logged.digest_before != state.digest:
                    raise ReplayMismatchError(branch, i, "digest_before diverged")
                if logged.agent_id == pool.terminator.id:
                    text, tokens, latent = "", 0, state.latent_correct
                else:
                    agent = pool.agents[pool.index_of(logged.agent_id)]
                    output = backend.run(agent, state)
                    text, tokens = output.text, output.tokens
                    latent = (
                        state.latent_correct
                        if output.latent_delta == 0
                        else output.latent_delta > 0
                    )
                if tokens != logged.tokens:
                    raise ReplayMismatchError(branch, i, "token count diverged")
                state = state.advance(
                    StepRecord(
                        agent_index=pool.index_of(logged.agent_id),
                        agent_id=logged.agent_id,
                        text=text,
                        tokens=tokens,
                        latent_correct=latent,
                    )
                )
                if logged.digest_after != state.digest:
                    raise ReplayMismatchError(branch, i, "digest_after diverged")
            answers.append(extract_answer([r.text for r in state.steps]))
        if episode.reward is not None and answers:
            from .orchestrator import majority_vote

            reward = env_score(env, majority_vote(answers), task)
            if abs(reward - episode.reward) > 1e-12:
                raise ReplayMismatchError(-1, -1, f"episode {episode.episode_id} reward diverged")
        checked += 1
    print(json.dumps({"episodes_verified": checked, "warnings": warnings}))
    return EXIT_OK


def _task_from_id(env, task_id: str | None):
    if not task_id:
        return None
    try:
        index = int(task_id.rsplit("-", 1)[1])
    except (IndexError, ValueError):
        return None
    return task_for_index(env, index)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="marionette",
        description="Train and analyze a centralized agent-selection policy.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run REINFORCE training on a simulated env")
    p_train.add_argument("--config", required=True)
    p_train.add_argument("--out", help="output directory override")
    p_train.add_argument("--seed", type=int)
    p_train.add_argument("--episodes", type=int)
    p_train.set_defaults(fn=cmd_train)

    p_eval = sub.add_parser("eval", help="run frozen-policy episodes")
    p_eval.add_argument("--config", required=True)
    p_eval.add_argument("--checkpoint", help="policy checkpoint (default: fresh zero init)")
    p_eval.add_argument("--episodes", type=int)
    p_eval.add_argument("--seed", type=int)
    p_eval.add_argument("--out", help="write the summary JSON here as well")
    p_eval.set_defaults(fn=cmd_eval)

    p_analyze = sub.add_parser("analyze", help="fold an episode log into graph metrics")
    p_analyze.add_argument("--log", required=True)
    p_analyze.add_argument("--out", help="output directory (default: alongside the log)")
    p_analyze.add_argument("--window", type=int, default=25)
    p_analyze.add_argument(
        "--dot", type=int, action="append", help="episode id to export as DOT (repeatable)"
    )
    p_analyze.set_defaults(fn=cmd_analyze)

    p_replay = sub.add_parser("replay", help="verify a logged run reproduces bit-for-bit")
    p_replay.add_argument("--config", required=True)
    p_replay.add_argument("--log", required=True)
    p_replay.add_argument("--seed", type=int)
    p_replay.set_defaults(fn=cmd_replay)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        for path, message in exc.field_errors:
            print(f"  {path}: {message}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointMismatchError as exc:
        print(f"checkpoint mismatch: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT
    except MarionetteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
