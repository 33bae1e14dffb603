from __future__ import annotations

import math

import numpy as np
import pytest

from marionette import (
    ContractError,
    OrchestratorConfig,
    PolicyParams,
    RewardConfig,
    TrainerConfig,
    Trajectory,
    TrainingAbortError,
    TrajectoryStep,
    batch_gradient,
    bandit_env,
    compute_returns,
    feature_length,
    init_params,
    step_cost,
    train,
    trajectory_return,
)
from marionette.policy import masked_log_probs


def hand_unrolled_returns(rewards_r, lam, gamma, phi, costs):
    """Independent oracle: the recursion written out directly.

    ``costs[i]`` is the cost factor of the step at list index i, acting at
    time t = i + 1.
    """
    T = len(costs)
    out = [0.0] * (T + 1)
    out[T] = rewards_r - lam * costs[T - 1] * math.log(1 + T / phi)
    for t in range(T - 1, -1, -1):
        c = costs[t - 1] * math.log(1 + t / phi) if t >= 1 else 0.0
        out[t] = gamma * out[t + 1] - lam * c
    return out


def make_trajectory(rng, params, n_steps, reward, cost_factors=None, forced_last=False):
    pool_size, d = params.weights.shape
    steps = []
    for i in range(n_steps):
        mask = np.ones(pool_size, dtype=bool)
        if i < n_steps - 1:
            mask[pool_size - 1] = False  # terminator ineligible mid-branch
        features = rng.normal(size=d)
        action = int(rng.choice(np.flatnonzero(mask)))
        forced = forced_last and i == n_steps - 1
        log_prob = 0.0 if forced else float(
            masked_log_probs(params, features, mask)[action]
        )
        cost = cost_factors[i] if cost_factors else 1.0
        steps.append(
            TrajectoryStep(
                t=i + 1,
                agent_index=action,
                agent_id=f"agent{action}",
                text="",
                tokens=0,
                log_prob=log_prob,
                forced=forced,
                cost_factor=cost,
                latent_correct=False,
                features=features,
                mask=mask,
                digest_before="",
                digest_after="",
            )
        )
    return Trajectory(
        branch_id=0,
        steps=steps,
        terminal_reward=reward,
        params_fingerprint=params.fingerprint(),
    )


class TestStepCost:
    def test_zero_at_t0(self):
        config = RewardConfig()
        assert step_cost(0, config, 123.0) == 0.0

    def test_scalar_values(self):
        config = RewardConfig(phi=4)
        assert step_cost(4, config, 1.0) == pytest.approx(math.log(2), abs=1e-9)
        assert step_cost(2, config, 2.0) == pytest.approx(2 * math.log(1.5), abs=1e-9)

    def test_global_cost_mode(self):
        config = RewardConfig(phi=4, cost_scale_mode="global", global_cost=3.0)
        assert step_cost(4, config, 99.0) == pytest.approx(3 * math.log(2), abs=1e-12)

    def test_strictly_increasing(self):
        config = RewardConfig(phi=4)
        values = [step_cost(t, config, 1.0) for t in range(4 * 4 + 1)]
        assert all(b > a for a, b in zip(values, values[1:]))


class TestComputeReturns:
    def test_costless_closed_form(self):
        params = init_params_for(3)
        rng = np.random.default_rng(0)
        traj = make_trajectory(rng, params, n_steps=3, reward=1.0)
        config = RewardConfig(lam=0.0, gamma=0.5)
        returns = compute_returns(traj, config)
        assert np.allclose(returns, [0.125, 0.25, 0.5, 1.0])

    def test_undiscounted_costless(self):
        params = init_params_for(3)
        traj = make_trajectory(np.random.default_rng(1), params, n_steps=4, reward=0.7)
        returns = compute_returns(traj, RewardConfig(lam=0.0, gamma=1.0))
        assert np.allclose(returns, 0.7)

    def test_documented_two_step_example(self):
        params = init_params_for(3)
        traj = make_trajectory(np.random.default_rng(2), params, n_steps=2, reward=1.0)
        config = RewardConfig(lam=0.1, gamma=0.99, phi=4)
        returns = compute_returns(traj, config)
        r2 = 1.0 - 0.1 * math.log(1.5)
        r1 = 0.99 * r2 - 0.1 * math.log(1.25)
        r0 = 0.99 * r1
        assert returns[2] == pytest.approx(r2, abs=1e-9)
        assert returns[1] == pytest.approx(r1, abs=1e-9)
        assert returns[0] == pytest.approx(r0, abs=1e-9)

    def test_matches_hand_unrolled_oracle(self):
        rng = np.random.default_rng(3)
        params = init_params_for(4)
        for _ in range(200):
            T = int(rng.integers(1, 11))
            lam = float(rng.uniform(0, 1))
            gamma = float(rng.uniform(0.05, 1.0))
            phi = int(rng.integers(1, 9))
            costs = [float(rng.uniform(0, 5)) for _ in range(T)]
            reward = float(rng.uniform(0, 1))
            traj = make_trajectory(rng, params, n_steps=T, reward=reward, cost_factors=costs)
            config = RewardConfig(lam=lam, gamma=gamma, phi=phi)
            expected = hand_unrolled_returns(reward, lam, gamma, phi, costs)
            assert np.allclose(compute_returns(traj, config), expected, atol=1e-9)

    def test_return_bounds_when_costless(self):
        rng = np.random.default_rng(4)
        params = init_params_for(4)
        for _ in range(50):
            traj = make_trajectory(
                rng, params, n_steps=int(rng.integers(1, 8)), reward=float(rng.uniform(0, 1))
            )
            returns = compute_returns(traj, RewardConfig(lam=0.0, gamma=float(rng.uniform(0.1, 1.0))))
            assert np.all(returns >= 0.0) and np.all(returns <= 1.0)

    def test_trajectory_return_is_r0(self):
        params = init_params_for(3)
        traj = make_trajectory(np.random.default_rng(5), params, n_steps=3, reward=1.0)
        config = RewardConfig(lam=0.0, gamma=0.5)
        assert trajectory_return(traj, config) == pytest.approx(0.125)


def init_params_for(pool_size):
    return PolicyParams(weights=np.zeros((pool_size, feature_length(pool_size))))


class TestBatchGradient:
    def test_zero_returns_zero_gradient(self):
        rng = np.random.default_rng(6)
        params = random_params(rng, 4)
        batch = [make_trajectory(rng, params, 3, reward=0.0) for _ in range(4)]
        config = RewardConfig(lam=0.0, gamma=1.0)
        grad = batch_gradient(batch, params, config)
        assert np.all(grad == 0.0)

    def test_single_eligible_action_zero_gradient(self):
        rng = np.random.default_rng(7)
        params = random_params(rng, 4)
        pool_size, d = params.weights.shape
        mask = np.zeros(pool_size, dtype=bool)
        mask[0] = True
        step = TrajectoryStep(
            t=1, agent_index=0, agent_id="only", text="", tokens=0, log_prob=0.0,
            forced=False, cost_factor=1.0, latent_correct=False,
            features=rng.normal(size=d), mask=mask, digest_before="", digest_after="",
        )
        traj = Trajectory(
            branch_id=0, steps=[step], terminal_reward=1.0,
            params_fingerprint=params.fingerprint(),
        )
        grad = batch_gradient([traj], params, RewardConfig())
        assert np.all(grad == 0.0)

    def test_matches_surrogate_finite_differences(self):
        # surrogate: (1/N) sum_n (sum_t log pi(a_t)) * R(tau_n), R held fixed
        rng = np.random.default_rng(8)
        params = random_params(rng, 4)
        reward_config = RewardConfig(lam=0.3, gamma=0.9, phi=4)
        batch = [
            make_trajectory(
                rng, params, int(rng.integers(1, 5)), reward=float(rng.uniform(0, 1)),
                forced_last=bool(rng.integers(2)),
            )
            for _ in range(6)
        ]
        returns = [trajectory_return(t, reward_config) for t in batch]

        def surrogate(weights):
            p = PolicyParams(weights=weights, temperature=params.temperature)
            total = 0.0
            for traj, ret in zip(batch, returns):
                lp = sum(
                    masked_log_probs(p, s.features, s.mask)[s.agent_index]
                    for s in traj.steps
                    if not s.forced
                )
                total += lp * ret
            return total / len(batch)

        analytic = batch_gradient(batch, params, reward_config)
        h = 1e-5
        numeric = np.zeros_like(params.weights)
        for i in range(params.weights.shape[0]):
            for j in range(params.weights.shape[1]):
                up = params.weights.copy()
                up[i, j] += h
                down = params.weights.copy()
                down[i, j] -= h
                numeric[i, j] = (surrogate(up) - surrogate(down)) / (2 * h)
        denom = max(np.linalg.norm(numeric), 1e-12)
        assert np.linalg.norm(analytic - numeric) / denom < 1e-4

    def test_off_policy_rejected(self):
        rng = np.random.default_rng(9)
        params = random_params(rng, 4)
        traj = make_trajectory(rng, params, 2, reward=1.0)
        stale = PolicyParams(weights=params.weights + 0.1, temperature=params.temperature)
        with pytest.raises(ContractError):
            batch_gradient([traj], stale, RewardConfig())

    def test_forced_steps_carry_no_score(self):
        rng = np.random.default_rng(10)
        params = random_params(rng, 4)
        traj = make_trajectory(rng, params, 1, reward=1.0, forced_last=True)
        grad = batch_gradient([traj], params, RewardConfig(lam=0.0))
        assert np.all(grad == 0.0)

    def test_score_function_shift_term_mean_zero(self):
        # adding a constant c to every return perturbs the estimate by
        # c * mean score; over many sampled actions that mean is ~0 within 3 sigma
        rng = np.random.default_rng(11)
        pool_size = 4
        params = random_params(rng, pool_size)
        d = params.weights.shape[1]
        features = rng.normal(size=d)
        mask = np.ones(pool_size, dtype=bool)
        from marionette import action_distribution, log_prob_grad

        probs = action_distribution(params, features, mask)
        n = 10_000
        actions = rng.choice(pool_size, size=n, p=probs)
        grads = np.stack([log_prob_grad(params, features, mask, a) for a in range(pool_size)])
        samples = grads[actions]  # n x pool x d
        mean = samples.mean(axis=0)
        std_err = samples.std(axis=0, ddof=1) / math.sqrt(n)
        # entries with zero variance are exactly zero-mean by symmetry
        live = std_err > 0
        z = np.abs(mean[live]) / std_err[live]
        assert np.quantile(z, 0.99) < 3.5
        assert np.abs(mean).max() < 5 * std_err.max()


def random_params(rng, pool_size):
    return PolicyParams(
        weights=rng.normal(scale=0.5, size=(pool_size, feature_length(pool_size))),
        temperature=1.0,
    )


class TestTrain:
    def test_zero_learning_rate_is_noop(self):
        pool, env = bandit_env(n_tasks=10)
        params = init_params(pool)
        before = params.weights.copy()
        train(
            env, pool, params, OrchestratorConfig(), RewardConfig(),
            TrainerConfig(episodes=20, learning_rate=0.0, seed=3),
        )
        assert np.array_equal(params.weights, before)

    def test_deterministic_given_seed(self):
        pool, env = bandit_env(n_tasks=10)
        reports = []
        for _ in range(2):
            params = init_params(pool)
            reports.append(
                train(
                    env, pool, params, OrchestratorConfig(), RewardConfig(),
                    TrainerConfig(episodes=25, seed=9),
                )
            )
        a, b = reports
        assert a.history == b.history
        assert a.final_mean_reward == b.final_mean_reward
        assert a.final_mean_tokens == b.final_mean_tokens

    def test_abort_on_non_finite_gradient(self, monkeypatch):
        pool, env = bandit_env(n_tasks=5)
        params = init_params(pool)

        import marionette.trainer as trainer_mod

        def poisoned(*args, **kwargs):
            bad = np.zeros_like(params.weights)
            bad[0, 0] = np.inf
            return bad

        monkeypatch.setattr(trainer_mod, "batch_gradient", poisoned)
        with pytest.raises(TrainingAbortError) as err:
            train(
                env, pool, params, OrchestratorConfig(), RewardConfig(),
                TrainerConfig(episodes=10, seed=1),
            )
        assert err.value.diagnostics["batch"]

    def test_moving_average_baseline_runs(self):
        pool, env = bandit_env(n_tasks=10)
        params = init_params(pool)
        report = train(
            env, pool, params, OrchestratorConfig(), RewardConfig(),
            TrainerConfig(episodes=20, seed=2, baseline="moving_average", baseline_window=10),
        )
        assert report.episodes == 20

    def test_metrics_csv_written(self, tmp_path):
        pool, env = bandit_env(n_tasks=10)
        params = init_params(pool)
        path = tmp_path / "metrics.csv"
        train(
            env, pool, params, OrchestratorConfig(), RewardConfig(),
            TrainerConfig(episodes=8, seed=4), metrics_path=path,
        )
        lines = path.read_text().strip().splitlines()
        assert len(lines) == 9  # header + one row per episode
        header = lines[0].split(",")
        assert header[:6] == ["episode", "reward", "return", "tokens", "steps", "answer_correct"]
        assert "sel_ace" in header
