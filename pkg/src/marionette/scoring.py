"""Answer normalization and the built-in task scorers."""
from __future__ import annotations

from collections import Counter
from typing import TYPE_CHECKING, Callable

if TYPE_CHECKING:
    from .orchestrator import TaskSpec

Scorer = Callable[[str, "TaskSpec"], float]


def normalize_answer(text: str) -> str:
    """Canonical comparison form: trimmed, case-folded, numbers canonicalized."""
    out = " ".join(text.strip().casefold().split())
    out = out.rstrip(".")
    try:
        value = float(out)
    except ValueError:
        return out
    if value == int(value):
        return str(int(value))
    return repr(value)


def exact_match(answer: str, task: "TaskSpec") -> float:
    if task.ground_truth is None:
        return 0.0
    return 1.0 if normalize_answer(answer) == normalize_answer(task.ground_truth) else 0.0


def token_f1(answer: str, task: "TaskSpec") -> float:
    """Normalized token-overlap F1 against the task's reference text."""
    if task.ground_truth is None:
        return 0.0
    pred = normalize_answer(answer).split()
    ref = normalize_answer(task.ground_truth).split()
    if not pred or not ref:
        return 1.0 if pred == ref else 0.0
    overlap = sum((Counter(pred) & Counter(ref)).values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred)
    recall = overlap / len(ref)
    return 2 * precision * recall / (precision + recall)


_BUILTIN: dict[str, Scorer] = {
    "exact": exact_match,
    "token_f1": token_f1,
}


def resolve_scorer(spec: str | Scorer | None, domain: str = "closed") -> Scorer:
    """Map a scorer name (or callable) to a callable; domain picks the default."""
    if spec is None:
        spec = "exact" if domain == "closed" else "token_f1"
    if callable(spec):
        return spec
    try:
        return _BUILTIN[spec]
    except KeyError:
        raise ValueError(f"unknown scorer {spec!r}; expected one of {sorted(_BUILTIN)}") from None
