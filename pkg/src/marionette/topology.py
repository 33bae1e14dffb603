"""Fold serialized episodes back into directed interaction graphs.

Node identity is the agent id, not the activation instance, so revisiting an
agent produces repeated edges and cycles instead of new nodes.  A synthetic
source (the task) and sink (the artifact) bracket every branch; they are
excluded from density and cycle metrics, which describe inter-agent structure
only.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

from .errors import ContractError

if TYPE_CHECKING:
    from .orchestrator import EpisodeResult

SOURCE = "__source__"
SINK = "__sink__"
DEFAULT_CYCLE_CAP = 10_000


@dataclass(frozen=True)
class TopologyGraph:
    """Folded episode graph: agent nodes plus source/sink flow, with edge
    multiplicities."""

    agent_nodes: tuple[str, ...]  # first-activation order
    flow: dict[tuple[str, str], int]  # all edges including source/sink

    @property
    def agent_edges(self) -> dict[tuple[str, str], int]:
        special = (SOURCE, SINK)
        return {
            (u, v): m
            for (u, v), m in self.flow.items()
            if u not in special and v not in special
        }

    def out_multiplicity(self, node: str) -> int:
        return sum(m for (u, _), m in self.flow.items() if u == node)

    def in_multiplicity(self, node: str) -> int:
        return sum(m for (_, v), m in self.flow.items() if v == node)


@dataclass(frozen=True)
class TopologyMetrics:
    node_count: int
    edge_count: int  # distinct agent-to-agent edges, self-loops excluded
    edge_multiplicity: int  # total agent-to-agent activations including repeats
    density: float
    simple_cycle_count: int
    cycles_saturated: bool
    self_loop_count: int
    motif: str  # chain | tree | dag | cyclic


def fold_sequences(branch_sequences: Sequence[Sequence[str]]) -> TopologyGraph:
    """Fold per-branch agent-id sequences (terminator already removed).

    Edges: source -> first agent of each branch, consecutive activations
    within a branch, last agent of each branch -> sink.  A branch that never
    activated an agent contributes a direct source -> sink edge.
    """
    if not branch_sequences:
        raise ContractError("fold requires at least one branch")
    nodes: list[str] = []
    flow: Counter[tuple[str, str]] = Counter()
    for sequence in branch_sequences:
        for agent_id in sequence:
            if agent_id in (SOURCE, SINK):
                raise ContractError(f"agent id collides with the {agent_id} marker")
            if agent_id not in nodes:
                nodes.append(agent_id)
        if not sequence:
            flow[(SOURCE, SINK)] += 1
            continue
        flow[(SOURCE, sequence[0])] += 1
        for u, v in zip(sequence, sequence[1:]):
            flow[(u, v)] += 1
        flow[(sequence[-1], SINK)] += 1
    return TopologyGraph(agent_nodes=tuple(nodes), flow=dict(flow))


def fold(episode: "EpisodeResult") -> TopologyGraph:
    """Fold an episode; the final step of every branch is the terminator
    selection and is dropped (the sink stands in for it)."""
    if not episode.trajectories:
        raise ContractError("episode has no trajectories to fold")
    for trajectory in episode.trajectories:
        if not trajectory.steps:
            raise ContractError(f"branch {trajectory.branch_id} has an empty trajectory")
    return fold_sequences([t.agent_ids(drop_last=True) for t in episode.trajectories])


def count_simple_cycles(
    adjacency: Mapping[str, Iterable[str]], cap: int | None = DEFAULT_CYCLE_CAP
) -> tuple[int, bool]:
    """Count elementary directed cycles of length >= 2 (Johnson-style search).

    Cycles are enumerated once each, anchored at their smallest node in a
    fixed ordering, with Johnson's blocking to avoid re-walking dead
    subtrees.  Counting stops at ``cap``: the return is (cap, True) when the
    graph has at least that many cycles.
    """
    order = {node: i for i, node in enumerate(sorted(adjacency))}
    neighbors = {
        node: sorted((v for v in adjacency[node] if v != node and v in order), key=order.get)
        for node in order
    }
    count = 0
    for start in sorted(order, key=order.get):
        rank = order[start]
        allowed = lambda v: order[v] > rank  # noqa: E731 - tight inner predicate
        blocked: set[str] = {start}
        unblock_after: dict[str, set[str]] = {}
        path = [start]
        stack = [iter(v for v in neighbors[start] if allowed(v))]
        found = [False]
        while stack:
            advanced = False
            for candidate in stack[-1]:
                if candidate == start:
                    count += 1
                    found[-1] = True
                    if cap is not None and count >= cap:
                        return cap, True
                elif candidate not in blocked:
                    blocked.add(candidate)
                    path.append(candidate)
                    found.append(False)
                    stack.append(
                        iter(
                            v
                            for v in neighbors[candidate]
                            if v == start or (allowed(v) and v not in blocked)
                        )
                    )
                    advanced = True
                    break
            if advanced:
                continue
            stack.pop()
            node = path.pop()
            if found.pop():
                if found:
                    found[-1] = True
                pending = {node}
                while pending:
                    u = pending.pop()
                    if u in blocked and u != start:
                        blocked.discard(u)
                        pending.update(unblock_after.pop(u, ()))
            else:
                for v in neighbors[node]:
                    if allowed(v):
                        unblock_after.setdefault(v, set()).add(node)
    return count, False


def _is_acyclic(adjacency: Mapping[str, set[str]]) -> bool:
    indegree = {node: 0 for node in adjacency}
    for node, outs in adjacency.items():
        for v in outs:
            indegree[v] += 1
    frontier = [node for node, d in indegree.items() if d == 0]
    seen = 0
    while frontier:
        node = frontier.pop()
        seen += 1
        for v in adjacency[node]:
            indegree[v] -= 1
            if indegree[v] == 0:
                frontier.append(v)
    return seen == len(adjacency)


def _weakly_connected(adjacency: Mapping[str, set[str]]) -> bool:
    if not adjacency:
        return True
    undirected: dict[str, set[str]] = {node: set() for node in adjacency}
    for node, outs in adjacency.items():
        for v in outs:
            undirected[node].add(v)
            undirected[v].add(node)
    frontier = [next(iter(adjacency))]
    seen = set(frontier)
    while frontier:
        node = frontier.pop()
        for v in undirected[node]:
            if v not in seen:
                seen.add(v)
                frontier.append(v)
    return len(seen) == len(adjacency)


def _classify_motif(
    adjacency: Mapping[str, set[str]], has_cycle: bool, self_loops: int
) -> str:
    if has_cycle or self_loops:
        return "cyclic"
    n = len(adjacency)
    if n <= 1:
        return "chain"
    max_out = max(len(v) for v in adjacency.values())
    indegree = Counter(v for outs in adjacency.values() for v in outs)
    max_in = max(indegree.values(), default=0)
    if max_out <= 1 and max_in <= 1 and _weakly_connected(adjacency):
        return "chain"
    if max_in <= 1:
        return "tree"
    return "dag"


def metrics(graph: TopologyGraph, cycle_cap: int | None = DEFAULT_CYCLE_CAP) -> TopologyMetrics:
    """Structural metrics over the agent-node subgraph.

    density = distinct non-self-loop edges / (n * (n - 1)) for n >= 2, zero
    otherwise; self-loops are reported separately and count as cyclic for the
    motif but not toward ``simple_cycle_count`` (length >= 2 cycles).
    """
    agent_edges = graph.agent_edges
    nodes = graph.agent_nodes
    self_loops = sum(1 for (u, v) in agent_edges if u == v)
    distinct = [(u, v) for (u, v) in agent_edges if u != v]
    n = len(nodes)
    density = len(distinct) / (n * (n - 1)) if n >= 2 else 0.0

    adjacency: dict[str, set[str]] = {node: set() for node in nodes}
    for u, v in distinct:
        adjacency[u].add(v)
    cycles, saturated = count_simple_cycles(adjacency, cap=cycle_cap)
    motif = _classify_motif(adjacency, cycles > 0, self_loops)
    return TopologyMetrics(
        node_count=n,
        edge_count=len(distinct),
        edge_multiplicity=sum(agent_edges.values()),
        density=density,
        simple_cycle_count=cycles,
        cycles_saturated=saturated,
        self_loop_count=self_loops,
        motif=motif,
    )


def trend_series(
    points: Sequence[tuple[int, float]], window: int = 25
) -> list[tuple[int, float]]:
    """Centered moving average with truncated windows at the endpoints.

    Window 1 is the identity; monotone inputs stay monotone.
    """
    if not points:
        raise ContractError("trend_series requires at least one point")
    if window < 1:
        raise ContractError("window must be >= 1")
    values = [float(v) for _, v in points]
    half = (window - 1) // 2
    smoothed = []
    for i, (index, _) in enumerate(points):
        lo = max(0, i - half)
        hi = min(len(values), i + half + 1)
        segment = values[lo:hi]
        smoothed.append((index, sum(segment) / len(segment)))
    return smoothed


def to_dot(graph: TopologyGraph, name: str = "episode") -> str:
    """DOT text: one node per agent id, penwidth proportional to multiplicity."""
    lines = [f'digraph "{name}" {{']
    lines.append(f'  "{SOURCE}" [shape=point, label=""];')
    lines.append(f'  "{SINK}" [shape=doublecircle, label=""];')
    for node in graph.agent_nodes:
        lines.append(f'  "{node}";')
    for (u, v), m in sorted(graph.flow.items()):
        lines.append(f'  "{u}" -> "{v}" [penwidth={float(m):.1f}, label="{m}"];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def to_adjacency(graph: TopologyGraph) -> dict:
    """JSON-friendly adjacency form of the folded graph."""
    return {
        "nodes": list(graph.agent_nodes),
        "source": SOURCE,
        "sink": SINK,
        "edges": [
            {"from": u, "to": v, "count": m} for (u, v), m in sorted(graph.flow.items())
        ],
    }
