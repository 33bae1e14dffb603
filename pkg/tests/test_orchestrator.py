from __future__ import annotations

import json

import numpy as np
import pytest

from marionette import (
    ContractError,
    EnvSpec,
    OrchestratorConfig,
    ReplayMismatchError,
    SimProfile,
    SimulatedBackend,
    SystemState,
    StepRecord,
    action_distribution,
    build_pool,
    extract_answer,
    featurize,
    init_params,
    majority_vote,
    replay,
    run_episode,
    step,
)
from conftest import sim_agent


def make_env_backend(pool, improve=0.5, emit=10.0, seed=11):
    profiles = {
        a.id: SimProfile(improve_prob=improve, emit_cost=emit)
        for a in pool
        if not a.is_terminator
    }
    env = EnvSpec(name="t", latent_model="noisy", profile_map=profiles)
    return env, SimulatedBackend(env, pool, seed=seed)


class TestStep:
    def test_terminator_masked_before_min_steps(self, small_pool, task, small_backend):
        params = init_params(small_pool)
        config = OrchestratorConfig(min_steps=1)
        state = SystemState(task=task)
        rng = np.random.default_rng(0)
        for _ in range(200):
            outcome = step(state, params, small_pool, config, small_backend, rng)
            assert outcome.action_index != small_pool.terminator_index

    def test_single_eligible_agent_log_prob_zero(self, task):
        pool = build_pool([sim_agent("only")])
        env, backend = make_env_backend(pool)
        outcome = step(
            SystemState(task=task), init_params(pool), pool,
            OrchestratorConfig(), backend, np.random.default_rng(1),
        )
        assert outcome.action_index == pool.index_of("only")
        assert outcome.log_prob == 0.0

    def test_uniform_sampling_frequency(self, task):
        pool = build_pool([sim_agent(f"a{i}") for i in range(4)])
        env, backend = make_env_backend(pool)
        params = init_params(pool)
        config = OrchestratorConfig(max_depth=4)
        state = SystemState(task=task)
        rng = np.random.default_rng(2)
        counts = np.zeros(len(pool))
        n = 10_000
        for _ in range(n):
            outcome = step(state, params, pool, config, backend, rng)
            counts[outcome.action_index] += 1
        freqs = counts / n
        for i in pool.non_terminator_indices():
            assert abs(freqs[i] - 0.25) < 0.02
        assert freqs[pool.terminator_index] == 0.0

    def test_budget_exhaustion_forces_terminator(self, small_pool, task, small_backend):
        params = init_params(small_pool)
        config = OrchestratorConfig(max_depth=4)
        state = SystemState(task=task)
        rng = np.random.default_rng(3)
        for _ in range(3):
            # drive to t = max_depth - 1 with non-terminator actions
            outcome = step(state, params, small_pool, config, small_backend, rng)
            state = outcome.state
            if outcome.action_index == small_pool.terminator_index:
                return  # chosen early; rebuild below
        assert state.step_count == 3
        outcome = step(state, params, small_pool, config, small_backend, rng)
        assert outcome.action_index == small_pool.terminator_index
        assert outcome.forced
        assert outcome.log_prob == 0.0

    def test_depth_exhausted_state_rejected(self, small_pool, task, small_backend):
        params = init_params(small_pool)
        config = OrchestratorConfig(max_depth=1)
        state = SystemState(task=task)
        outcome = step(state, params, small_pool, config, small_backend, np.random.default_rng(4))
        with pytest.raises(ContractError):
            step(outcome.state, params, small_pool, config, small_backend, np.random.default_rng(5))

    def test_dimension_mismatch_rejected(self, small_pool, task, small_backend):
        bad = init_params(build_pool([sim_agent("x"), sim_agent("y")]))
        with pytest.raises(ContractError):
            step(
                SystemState(task=task), bad, small_pool,
                OrchestratorConfig(), small_backend, np.random.default_rng(6),
            )


class TestMarkovContract:
    def test_equal_digests_equal_distributions(self, small_pool, task):
        params = init_params(small_pool)
        rng = np.random.default_rng(7)
        config = OrchestratorConfig()
        for _ in range(200):
            n_steps = int(rng.integers(0, config.max_depth - 1))
            records = tuple(
                StepRecord(
                    agent_index=(idx := int(rng.integers(len(small_pool) - 1))),
                    agent_id=small_pool[idx].id,
                    text=f"output {rng.integers(1000)}",
                    tokens=5,
                    latent_correct=bool(rng.integers(2)),
                )
                for _ in range(n_steps)
            )
            s1 = SystemState(task=task, branch_id=0, steps=records)
            s2 = SystemState(task=task, branch_id=1, steps=records)
            assert s1.digest == s2.digest
            mask = np.ones(len(small_pool), dtype=bool)
            f1 = featurize(s1, task, small_pool, config.max_depth)
            f2 = featurize(s2, task, small_pool, config.max_depth)
            p1 = action_distribution(params, f1, mask)
            p2 = action_distribution(params, f2, mask)
            assert np.array_equal(p1, p2)

    def test_digest_changes_with_steps(self, small_pool, task):
        state = SystemState(task=task)
        digests = {state.digest}
        for i in range(4):
            state = state.advance(
                StepRecord(agent_index=0, agent_id="a", text=f"step {i}", tokens=1, latent_correct=False)
            )
            assert state.digest not in digests
            digests.add(state.digest)


class TestRunEpisode:
    def test_minimal_episode_shape(self, task):
        pool = build_pool([sim_agent("only")])
        env, backend = make_env_backend(pool, improve=1.0)
        config = OrchestratorConfig(width=1, max_depth=2)
        result = run_episode(task, init_params(pool), pool, config, backend, scorer="exact", rng_seed=1)
        assert len(result.trajectories) == 1
        traj = result.trajectories[0]
        assert traj.length == 2  # one reasoning step + terminator
        assert traj.steps[-1].agent_id == pool.terminator.id
        assert result.final_answer == task.ground_truth
        assert result.terminal_reward == 1.0

    def test_width_and_depth_bounds(self, small_pool, task, small_backend):
        for width in (1, 2, 3, 4):
            for depth in (2, 3, 4, 5, 6):
                config = OrchestratorConfig(width=width, max_depth=depth)
                result = run_episode(
                    task, init_params(small_pool), small_pool, config, small_backend,
                    scorer="exact", rng_seed=(width, depth),
                )
                assert 1 <= len(result.trajectories) <= width
                for traj in result.trajectories:
                    assert traj.length <= depth
                    assert traj.steps[-1].agent_id == small_pool.terminator.id

    def test_token_accounting(self, small_pool, task, small_backend):
        result = run_episode(
            task, init_params(small_pool), small_pool, OrchestratorConfig(), small_backend,
            scorer="exact", rng_seed=8,
        )
        assert result.total_tokens == sum(
            s.tokens for t in result.trajectories for s in t.steps
        )
        # terminator steps are free
        for traj in result.trajectories:
            assert traj.steps[-1].tokens == 0

    def test_bitwise_reproducible(self, small_pool, task, small_backend):
        results = [
            run_episode(
                task, init_params(small_pool), small_pool, OrchestratorConfig(),
                small_backend, scorer="exact", rng_seed=(3, 4),
            )
            for _ in range(2)
        ]
        a, b = (json.dumps(r.to_jsonable(), sort_keys=True) for r in results)
        assert a == b

    def test_closed_reward_is_exact_match(self, small_pool, task):
        env, backend = make_env_backend(small_pool, improve=1.0)
        result = run_episode(
            task, init_params(small_pool), small_pool, OrchestratorConfig(),
            backend, scorer="exact", rng_seed=9,
        )
        assert result.final_answer == task.ground_truth
        assert result.terminal_reward == 1.0

        env2, backend2 = make_env_backend(small_pool, improve=0.0)
        result2 = run_episode(
            task, init_params(small_pool), small_pool, OrchestratorConfig(),
            backend2, scorer="exact", rng_seed=9,
        )
        assert result2.final_answer != task.ground_truth
        assert result2.terminal_reward == 0.0


class TestMajorityVote:
    def test_clear_majority(self):
        assert majority_vote(["A", "A", "B"]) == "A"

    def test_tie_breaks_to_earliest_branch(self):
        assert majority_vote(["A", "B"]) == "A"
        assert majority_vote(["B", "A", "A", "B"]) == "B"

    def test_normalization_merges_variants(self):
        from marionette.scoring import normalize_answer

        assert majority_vote(["  42 ", "42"]) == "42"
        # numeric variants pool their votes; the earliest literal is returned
        winner = majority_vote(["42.0", "42", "oops"])
        assert normalize_answer(winner) == "42"
        assert majority_vote(["Yes", "yes", "no"]) == "Yes"

    def test_empty_rejected(self):
        with pytest.raises(ContractError):
            majority_vote([])

    def test_paper_style_example(self):
        assert majority_vote(["42", "7", "42"]) == "42"


class TestExtractAnswer:
    def test_takes_last_marker(self):
        texts = ["thinking\nFINAL ANSWER: 1", "more\nFINAL ANSWER: 2"]
        assert extract_answer(texts) == "2"

    def test_marker_in_earlier_step_only(self):
        texts = ["FINAL ANSWER: 7", ""]
        assert extract_answer(texts) == "7"

    def test_absent_marker_returns_whole_output(self):
        assert extract_answer(["some reasoning", "the result"]) == "the result"

    def test_no_text_at_all(self):
        assert extract_answer(["", ""]) == ""


class TestReplay:
    def _episode(self, small_pool, task, small_backend, seed=(5, 6)):
        return run_episode(
            task, init_params(small_pool), small_pool, OrchestratorConfig(),
            small_backend, scorer="exact", rng_seed=seed,
        )

    def test_round_trip(self, small_pool, task, small_backend):
        result = self._episode(small_pool, task, small_backend)
        replayed = replay(result.trajectories, task, small_pool, small_backend, scorer="exact")
        assert replayed.final_answer == result.final_answer
        assert replayed.terminal_reward == result.terminal_reward
        assert replayed.total_tokens == result.total_tokens
        assert json.dumps(replayed.to_jsonable(), sort_keys=True) == json.dumps(
            result.to_jsonable(), sort_keys=True
        )

    def test_tampered_output_detected(self, small_pool, task, small_backend):
        result = self._episode(small_pool, task, small_backend)
        victim = next(t for t in result.trajectories if t.length >= 2)
        victim.steps[1].text = victim.steps[1].text + " TAMPERED"
        with pytest.raises(ReplayMismatchError) as err:
            replay(result.trajectories, task, small_pool, small_backend, scorer="exact")
        assert err.value.step_index == 1

    def test_empty_log_is_vacuous(self, small_pool, task, small_backend):
        result = replay([], task, small_pool, small_backend)
        assert result.trajectories == []
        assert result.total_tokens == 0
