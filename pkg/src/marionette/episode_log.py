"""Append-only JSONL episode logs.

One object per step:
    {"type": "step", "episode_id", "branch", "t", "agent_id", "log_prob",
     "tokens", "digest_before", "digest_after", "forced"}
one terminal object per episode:
    {"type": "terminal", "episode_id", "task_id", "reward", "total_tokens",
     "answer"}
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .orchestrator import EpisodeResult, TaskSpec

logger = logging.getLogger(__name__)


class EpisodeLogWriter:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self._fh = self.path.open("w", encoding="utf-8")

    def append(self, episode_id: int, task: TaskSpec, result: EpisodeResult) -> None:
        for trajectory in result.trajectories:
            for step in trajectory.steps:
                self._write(
                    {
                        "type": "step",
                        "episode_id": episode_id,
                        "branch": trajectory.branch_id,
                        "t": step.t,
                        "agent_id": step.agent_id,
                        "log_prob": step.log_prob,
                        "tokens": step.tokens,
                        "digest_before": step.digest_before,
                        "digest_after": step.digest_after,
                        "forced": step.forced,
                    }
                )
        self._write(
            {
                "type": "terminal",
                "episode_id": episode_id,
                "task_id": task.id,
                "reward": result.terminal_reward,
                "total_tokens": result.total_tokens,
                "answer": result.final_answer,
            }
        )

    def _write(self, obj: dict) -> None:
        self._fh.write(json.dumps(obj, sort_keys=True) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self) -> "EpisodeLogWriter":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


@dataclass
class LoggedStep:
    t: int
    agent_id: str
    log_prob: float
    tokens: int
    digest_before: str
    digest_after: str
    forced: bool = False


@dataclass
class LoggedEpisode:
    episode_id: int
    branches: dict[int, list[LoggedStep]] = field(default_factory=dict)
    task_id: str | None = None
    reward: float | None = None
    total_tokens: int | None = None
    answer: str | None = None


def read_episode_log(path: str | Path) -> tuple[list[LoggedEpisode], int]:
    """Parse a JSONL log; corrupt lines are skipped with a warning count."""
    episodes: dict[int, LoggedEpisode] = {}
    warnings = 0
    with Path(path).open("r", encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
                kind = obj["type"]
                episode_id = int(obj["episode_id"])
                episode = episodes.setdefault(episode_id, LoggedEpisode(episode_id=episode_id))
                if kind == "step":
                    episode.branches.setdefault(int(obj["branch"]), []).append(
                        LoggedStep(
                            t=int(obj["t"]),
                            agent_id=obj["agent_id"],
                            log_prob=float(obj["log_prob"]),
                            tokens=int(obj["tokens"]),
                            digest_before=obj["digest_before"],
                            digest_after=obj["digest_after"],
                            forced=bool(obj.get("forced", False)),
                        )
                    )
                elif kind == "terminal":
                    episode.task_id = obj.get("task_id")
                    episode.reward = float(obj["reward"])
                    episode.total_tokens = int(obj["total_tokens"])
                    episode.answer = obj.get("answer")
                else:
                    raise ValueError(f"unknown record type {kind!r}")
            except (ValueError, KeyError, TypeError) as exc:
                warnings += 1
                logger.warning("skipping corrupt log line %d: %s", line_no, exc)
    for episode in episodes.values():
        for steps in episode.branches.values():
            steps.sort(key=lambda s: s.t)
    ordered = [episodes[k] for k in sorted(episodes)]
    return ordered, warnings
