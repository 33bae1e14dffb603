from __future__ import annotations

import numpy as np
import pytest

from marionette import (
    ContractError,
    OrchestratorConfig,
    bandit_env,
    SimulatedBackend,
    fold,
    fold_sequences,
    init_params,
    metrics,
    run_episode,
    sample_task,
    to_adjacency,
    to_dot,
    trend_series,
)
from marionette.topology import SINK, SOURCE, count_simple_cycles


def brute_force_cycles(nodes, edges):
    """Oracle: enumerate every elementary cycle (length >= 2) by DFS path
    extension, anchored at the smallest node of the cycle."""
    adjacency = {n: [v for (u, v) in edges if u == n and v != n] for n in nodes}
    count = 0
    order = {n: i for i, n in enumerate(sorted(nodes))}

    def extend(start, node, visited):
        nonlocal count
        for nxt in adjacency[node]:
            if nxt == start:
                count += 1
            elif nxt not in visited and order[nxt] > order[start]:
                extend(start, nxt, visited | {nxt})

    for start in nodes:
        extend(start, start, {start})
    return count


def all_digraphs(n, self_loops=False):
    nodes = list(range(n))
    pairs = [(u, v) for u in nodes for v in nodes if self_loops or u != v]
    for bits in range(2 ** len(pairs)):
        yield nodes, [pairs[i] for i in range(len(pairs)) if bits >> i & 1]


class TestCountSimpleCycles:
    def test_exhaustive_small_graphs(self):
        for n in range(1, 5):
            for nodes, edges in all_digraphs(n):
                adjacency = {u: [v for (a, v) in edges if a == u] for u in nodes}
                got, saturated = count_simple_cycles({str(u): [str(v) for v in vs] for u, vs in adjacency.items()}, cap=None)
                expected = brute_force_cycles(nodes, edges)
                assert got == expected, (n, edges)
                assert not saturated

    def test_complete_digraph_on_three_nodes(self):
        edges = [(u, v) for u in range(3) for v in range(3) if u != v]
        adjacency = {str(u): [str(v) for (a, v) in edges if a == u] for u in range(3)}
        assert count_simple_cycles(adjacency, cap=None) == (5, False)

    def test_cap_saturates(self):
        # complete digraph on 7 nodes has far more cycles than the cap
        nodes = [str(i) for i in range(7)]
        adjacency = {u: [v for v in nodes if v != u] for u in nodes}
        count, saturated = count_simple_cycles(adjacency, cap=50)
        assert count == 50 and saturated

    def test_self_loops_ignored(self):
        assert count_simple_cycles({"a": ["a"]}, cap=None) == (0, False)


class TestFold:
    def test_chain_fold(self):
        graph = fold_sequences([["A", "B"]])
        assert set(graph.agent_nodes) == {"A", "B"}
        assert graph.flow == {(SOURCE, "A"): 1, ("A", "B"): 1, ("B", SINK): 1}
        m = metrics(graph)
        assert m.density == pytest.approx(0.5)
        assert m.motif == "chain"
        assert m.simple_cycle_count == 0

    def test_revisit_creates_cycle(self):
        graph = fold_sequences([["A", "B", "A"]])
        assert graph.agent_edges == {("A", "B"): 1, ("B", "A"): 1}
        m = metrics(graph)
        assert m.motif == "cyclic"
        assert m.simple_cycle_count == 1
        assert m.density == pytest.approx(1.0)

    def test_branch_fanout(self):
        graph = fold_sequences([["A"], ["B"], ["C"]])
        assert graph.out_multiplicity(SOURCE) == 3
        assert graph.in_multiplicity(SINK) == 3

    def test_empty_branch_contributes_source_sink_edge(self):
        graph = fold_sequences([["A"], []])
        assert graph.flow[(SOURCE, SINK)] == 1

    def test_no_branches_rejected(self):
        with pytest.raises(ContractError):
            fold_sequences([])

    def test_self_loop_counted_separately(self):
        graph = fold_sequences([["A", "A"]])
        m = metrics(graph)
        assert m.self_loop_count == 1
        assert m.simple_cycle_count == 0
        assert m.motif == "cyclic"
        assert m.density == 0.0  # single node

    def test_fold_episode_drops_terminator(self):
        pool, env = bandit_env(n_tasks=5)
        backend = SimulatedBackend(env, pool, seed=1)
        task = sample_task(env, np.random.default_rng(0))
        result = run_episode(
            task, init_params(pool), pool, OrchestratorConfig(), backend,
            scorer="exact", rng_seed=2,
        )
        graph = fold(result)
        assert pool.terminator.id not in graph.agent_nodes

    def test_fold_deterministic(self):
        sequences = [["A", "B", "C"], ["B", "A"], []]
        assert fold_sequences(sequences) == fold_sequences(sequences)

    def test_unfold_consistency(self):
        # every consecutive pair appears as an edge with matching multiplicity
        rng = np.random.default_rng(3)
        agents = ["a", "b", "c", "d"]
        for _ in range(100):
            sequences = [
                [agents[int(rng.integers(len(agents)))] for _ in range(int(rng.integers(0, 5)))]
                for _ in range(int(rng.integers(1, 4)))
            ]
            graph = fold_sequences(sequences)
            expected: dict = {}
            for seq in sequences:
                for u, v in zip(seq, seq[1:]):
                    expected[(u, v)] = expected.get((u, v), 0) + 1
            assert graph.agent_edges == expected


class TestMetrics:
    def test_four_node_chain(self):
        graph = fold_sequences([["A", "B", "C", "D"]])
        m = metrics(graph)
        assert m.density == pytest.approx(3 / 12)
        assert m.simple_cycle_count == 0
        assert m.motif == "chain"

    def test_complete_digraph_density_one(self):
        graph = fold_sequences([["A", "B", "A", "C", "A"], ["B", "C", "B"], ["C", "A", "B"]])
        # edges: A->B, B->A, A->C, C->A, B->C, C->B = complete on 3 nodes
        m = metrics(graph)
        assert m.density == 1.0
        assert m.simple_cycle_count == 5
        assert m.motif == "cyclic"

    def test_tree_motif(self):
        graph = fold_sequences([["A", "B"], ["A", "C"]])
        m = metrics(graph)
        assert m.motif == "tree"

    def test_dag_motif(self):
        graph = fold_sequences([["A", "B", "D"], ["A", "C", "D"]])
        m = metrics(graph)
        assert m.motif == "dag"
        assert m.simple_cycle_count == 0

    def test_density_bounds_random(self):
        rng = np.random.default_rng(4)
        agents = ["a", "b", "c", "d", "e"]
        for _ in range(200):
            sequences = [
                [agents[int(rng.integers(5))] for _ in range(int(rng.integers(1, 8)))]
                for _ in range(int(rng.integers(1, 4)))
            ]
            m = metrics(fold_sequences(sequences))
            assert 0.0 <= m.density <= 1.0

    def test_chain_motif_soundness(self):
        rng = np.random.default_rng(5)
        agents = ["a", "b", "c", "d"]
        seen_chain = 0
        for _ in range(300):
            sequences = [
                [agents[int(rng.integers(4))] for _ in range(int(rng.integers(1, 6)))]
            ]
            graph = fold_sequences(sequences)
            m = metrics(graph)
            if m.motif == "chain":
                seen_chain += 1
                assert m.simple_cycle_count == 0 and m.self_loop_count == 0
                outs = {}
                ins = {}
                for u, v in graph.agent_edges:
                    outs[u] = outs.get(u, 0) + 1
                    ins[v] = ins.get(v, 0) + 1
                assert all(c <= 1 for c in outs.values())
                assert all(c <= 1 for c in ins.values())
        assert seen_chain > 0


class TestTrendSeries:
    def test_constant_series(self):
        points = [(i, 5.0) for i in range(10)]
        assert trend_series(points, window=5) == points

    def test_window_one_is_identity(self):
        points = [(i, float(i * i)) for i in range(10)]
        assert trend_series(points, window=1) == points

    def test_linear_ramp_interior_unchanged(self):
        points = [(i, float(i)) for i in range(100)]
        smoothed = trend_series(points, window=25)
        for i in range(12, 88):
            assert smoothed[i][1] == pytest.approx(float(i), abs=1e-9)

    def test_monotone_preserved(self):
        rng = np.random.default_rng(6)
        values = np.cumsum(rng.random(50))
        points = [(i, float(v)) for i, v in enumerate(values)]
        smoothed = [v for _, v in trend_series(points, window=7)]
        assert all(b >= a - 1e-12 for a, b in zip(smoothed, smoothed[1:]))

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            trend_series([])


class TestExports:
    def test_dot_contains_nodes_and_penwidth(self):
        graph = fold_sequences([["A", "B", "A"]])
        dot = to_dot(graph, name="ep3")
        assert 'digraph "ep3"' in dot
        assert '"A" -> "B"' in dot
        assert "penwidth=" in dot

    def test_adjacency_round_trip_fields(self):
        graph = fold_sequences([["A", "B"], ["B"]])
        adj = to_adjacency(graph)
        assert set(adj["nodes"]) == {"A", "B"}
        edge_set = {(e["from"], e["to"]): e["count"] for e in adj["edges"]}
        assert edge_set[("A", "B")] == 1
        assert edge_set[(SOURCE, "B")] == 1
