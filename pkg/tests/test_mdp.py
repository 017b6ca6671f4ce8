import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import (
    bellman_loops,
    neumann_resolvent_apply,
    policy_matrix_loops,
    policy_transition_loops,
    value_iteration,
)
from vrql.errors import ConvergenceError, DimensionError, ValidationError
from vrql.example import example1_mdp, example1_qstar, example1_params
from vrql.mdp import (
    TabularMDP,
    apply_policy_transition,
    bellman_optimality,
    evaluate_policy,
    greedy_policy,
    linf_distance,
    load_mdp,
    policy_transition_matrix,
    random_mdp,
    resolvent_apply,
    resolvent_matrix,
    save_mdp,
    solve_optimal_q,
    span_seminorm,
)

mdp_params = st.tuples(
    st.integers(1, 5),
    st.integers(1, 4),
    st.floats(0.05, 0.98),
    st.integers(0, 2**31 - 1),
)


def _mdp(params, noise=0.0):
    X, U, gamma, seed = params
    return random_mdp(X, U, gamma, reward_noise=noise, seed=seed)


def one_state(gamma=0.5, r=1.0):
    return TabularMDP(np.ones((1, 1, 1)), np.array([[r]]), gamma)


def identity_mdp(X=3, U=2, gamma=0.8, seed=0):
    rng = np.random.default_rng(seed)
    P = np.broadcast_to(np.eye(X), (U, X, X))
    return TabularMDP(P, rng.normal(size=(X, U)), gamma)


class TestConstruction:
    def test_rejects_bad_rows(self):
        P = np.array([[[0.5, 0.4], [0.0, 1.0]]])
        with pytest.raises(ValidationError):
            TabularMDP(P, np.zeros((2, 1)), 0.9)

    def test_rejects_negative(self):
        P = np.array([[[1.1, -0.1], [0.0, 1.0]]])
        with pytest.raises(ValidationError):
            TabularMDP(P, np.zeros((2, 1)), 0.9)

    @pytest.mark.parametrize("gamma", [0.0, 1.0, -0.1, 1.5])
    def test_rejects_gamma(self, gamma):
        with pytest.raises(ValidationError):
            TabularMDP(np.ones((1, 1, 1)), np.zeros((1, 1)), gamma)

    def test_rejects_negative_noise(self):
        with pytest.raises(ValidationError):
            TabularMDP(np.ones((1, 1, 1)), np.zeros((1, 1)), 0.5, reward_noise=-1)

    def test_rejects_reward_shape(self):
        with pytest.raises(ValidationError):
            TabularMDP(np.ones((1, 1, 1)), np.zeros((2, 1)), 0.5)

    def test_rows_renormalised_within_tolerance(self):
        P = np.array([[[0.5, 0.5 + 5e-13], [0.0, 1.0]]])
        mdp = TabularMDP(P, np.zeros((2, 1)), 0.9)
        assert np.all(mdp.transitions.sum(axis=2) == 1.0)

    def test_arrays_read_only(self):
        mdp = random_mdp(3, 2, 0.9, seed=1)
        with pytest.raises(ValueError):
            mdp.rewards[0, 0] = 5.0

    def test_dim(self):
        assert random_mdp(4, 3, 0.9, seed=0).dim == 12

    def test_file_round_trip(self, tmp_path):
        mdp = random_mdp(4, 3, 0.7, reward_noise=0.3, seed=2)
        path = tmp_path / "m.json"
        save_mdp(mdp, path)
        back = load_mdp(path)
        assert np.array_equal(back.transitions, mdp.transitions)
        assert np.array_equal(back.rewards, mdp.rewards)
        assert (back.gamma, back.reward_noise) == (mdp.gamma, mdp.reward_noise)

    def test_file_size_mismatch(self, tmp_path):
        doc = random_mdp(2, 2, 0.7, seed=2).to_dict()
        doc["num_states"] = 3
        path = tmp_path / "m.json"
        path.write_text(json.dumps(doc))
        with pytest.raises(ValidationError):
            load_mdp(path)

    def test_file_not_json(self, tmp_path):
        path = tmp_path / "m.json"
        path.write_text("{nope")
        with pytest.raises(ValidationError):
            load_mdp(path)


class TestBellman:
    def test_one_state(self):
        assert bellman_optimality(one_state(), np.zeros((1, 1)))[0, 0] == 1.0

    def test_example_fixed_point(self):
        q = example1_qstar(0.9, 0.5)
        assert linf_distance(bellman_optimality(example1_mdp(0.9, 0.5), q), q) <= 1e-10

    def test_matches_triple_loop(self):
        mdp = random_mdp(5, 3, 0.9, seed=11)
        q = np.random.default_rng(0).normal(size=(5, 3))
        expected = bellman_loops(mdp.transitions, mdp.rewards, mdp.gamma, q)
        assert np.allclose(bellman_optimality(mdp, q), expected, rtol=0, atol=1e-13)

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            bellman_optimality(random_mdp(3, 2, 0.9, seed=0), np.zeros((2, 3)))

    @settings(max_examples=100, deadline=None)
    @given(mdp_params, st.integers(0, 2**31 - 1))
    def test_contraction(self, params, qseed):
        mdp = _mdp(params)
        rng = np.random.default_rng(qseed)
        q1 = rng.normal(scale=5, size=mdp.shape)
        q2 = rng.normal(scale=5, size=mdp.shape)
        lhs = linf_distance(bellman_optimality(mdp, q1), bellman_optimality(mdp, q2))
        assert lhs <= mdp.gamma * linf_distance(q1, q2) + 1e-12

    @settings(max_examples=100, deadline=None)
    @given(mdp_params, st.integers(0, 2**31 - 1))
    def test_monotone(self, params, qseed):
        mdp = _mdp(params)
        rng = np.random.default_rng(qseed)
        q2 = rng.normal(size=mdp.shape)
        q1 = q2 + rng.uniform(0, 2, size=mdp.shape)
        assert np.all(bellman_optimality(mdp, q1) >= bellman_optimality(mdp, q2) - 1e-12)


class TestPolicyTransition:
    def test_identity_kernel(self):
        mdp = identity_mdp()
        q = np.random.default_rng(3).normal(size=mdp.shape)
        pi = np.array([1, 0, 1])
        out = apply_policy_transition(mdp, pi, q)
        expected = q[np.arange(3), pi]
        assert np.array_equal(out, np.repeat(expected[:, None], 2, axis=1))

    def test_example_rearranged_fixed_point(self):
        gamma, lam = 0.9, 0.5
        mdp = example1_mdp(gamma, lam)
        q = example1_qstar(gamma, lam)
        out = apply_policy_transition(mdp, [0, 0], q)
        assert np.allclose(out[:, 0], (q[:, 0] - mdp.rewards[:, 0]) / gamma, atol=1e-12)

    def test_matches_double_loop(self):
        mdp = random_mdp(5, 3, 0.9, seed=12)
        q = np.random.default_rng(1).normal(size=(5, 3))
        pi = np.array([2, 0, 1, 1, 0])
        expected = policy_transition_loops(mdp.transitions, pi, q)
        assert np.allclose(apply_policy_transition(mdp, pi, q), expected, rtol=0, atol=1e-13)

    def test_matrix_matches_loops(self):
        mdp = random_mdp(4, 3, 0.9, seed=13)
        pi = np.array([2, 0, 1, 1])
        assert np.allclose(policy_transition_matrix(mdp, pi), policy_matrix_loops(mdp.transitions, pi))

    def test_row_stochastic(self):
        mdp = random_mdp(4, 3, 0.9, seed=14)
        out = apply_policy_transition(mdp, [0, 1, 2, 0], np.ones(mdp.shape))
        assert np.allclose(out, 1.0, atol=1e-14)

    def test_bad_policy(self):
        mdp = random_mdp(3, 2, 0.9, seed=0)
        with pytest.raises(ValidationError):
            apply_policy_transition(mdp, [0, 2, 0], np.zeros(mdp.shape))
        with pytest.raises(DimensionError):
            apply_policy_transition(mdp, [0, 1], np.zeros(mdp.shape))


class TestGreedy:
    def test_tie_goes_to_smallest(self):
        assert greedy_policy(np.array([[1.0, 1.0]]))[0] == 0

    def test_strict_max(self):
        assert greedy_policy(np.array([[0.0, 5.0]]))[0] == 1

    def test_tie_tolerance(self):
        q = np.array([[1.0, 1.0 + 1e-8]])
        assert greedy_policy(q)[0] == 1
        assert greedy_policy(q, tie_tol=1e-6)[0] == 0

    def test_example_policy(self):
        assert greedy_policy(example1_qstar(0.9, 0.5)).tolist() == [0, 0]

    def test_rejects_negative_tol(self):
        with pytest.raises(ValidationError):
            greedy_policy(np.zeros((2, 2)), tie_tol=-1)


class TestSolve:
    def test_one_state(self):
        assert solve_optimal_q(one_state())[0, 0] == pytest.approx(2.0, abs=1e-12)

    def test_example_closed_form(self):
        gamma, lam = 0.9, 0.5
        _, tau = example1_params(gamma, lam)
        q = solve_optimal_q(example1_mdp(gamma, lam))
        assert q[0, 0] == pytest.approx(0.25 * (3 + tau) / (1 - gamma), abs=1e-10)

    def test_matches_long_value_iteration(self):
        mdp = random_mdp(6, 4, 0.9, seed=5)
        # 10^6 iterations is the nominal count; the loop stops once iterates stop moving
        oracle = value_iteration(mdp.transitions, mdp.rewards, mdp.gamma, 1_000_000)
        assert linf_distance(solve_optimal_q(mdp), oracle) <= 1e-9

    @settings(max_examples=50, deadline=None)
    @given(mdp_params)
    def test_fixed_point_residual(self, params):
        mdp = _mdp(params)
        q = solve_optimal_q(mdp, tol=1e-10)
        assert linf_distance(bellman_optimality(mdp, q), q) <= 1e-10

    @settings(max_examples=50, deadline=None)
    @given(mdp_params)
    def test_greedy_consistency(self, params):
        mdp = _mdp(params)
        q = solve_optimal_q(mdp)
        pi = greedy_policy(q)
        rhs = mdp.rewards + mdp.gamma * apply_policy_transition(mdp, pi, q)
        assert linf_distance(bellman_optimality(mdp, q), rhs) <= 1e-12 * max(1.0, np.abs(q).max())

    def test_iteration_cap(self):
        mdp = random_mdp(4, 2, 0.999, seed=0)
        with pytest.raises(ConvergenceError):
            solve_optimal_q(mdp, tol=1e-300, max_iter=3)

    def test_rejects_bad_tol(self):
        with pytest.raises(ValidationError):
            solve_optimal_q(one_state(), tol=0)


class TestResolvent:
    def test_all_ones(self):
        mdp = random_mdp(4, 3, 0.8, seed=21)
        out = resolvent_apply(mdp, [0, 1, 2, 0], np.ones(mdp.shape))
        assert np.allclose(out, 1 / (1 - 0.8), atol=1e-10)

    def test_identity_kernel_closed_form(self):
        # with P_u = I every pair (x, u) moves to (x, pi(x)), whose value solves
        # v = m(x, pi(x)) / (1 - gamma); then u(x, a) = m(x, a) + gamma v
        mdp = identity_mdp(X=3, U=2, gamma=0.7)
        m = np.random.default_rng(4).normal(size=mdp.shape)
        pi = np.array([1, 0, 0])
        v = m[np.arange(3), pi] / (1 - 0.7)
        expected = m + 0.7 * v[:, None]
        assert np.allclose(resolvent_apply(mdp, pi, m), expected, atol=1e-12)

    def test_matches_neumann(self):
        mdp = random_mdp(5, 3, 0.9, seed=22)
        m = np.random.default_rng(5).normal(size=mdp.shape)
        pi = np.array([0, 2, 1, 1, 0])
        expected = neumann_resolvent_apply(mdp.transitions, pi, m, mdp.gamma, 2000)
        assert np.allclose(resolvent_apply(mdp, pi, m), expected, rtol=0, atol=1e-8)

    def test_matrix_nonnegative_rows(self):
        mdp = random_mdp(4, 2, 0.95, seed=23)
        U = resolvent_matrix(mdp, [0, 1, 1, 0])
        assert U.min() >= -1e-12
        assert np.allclose(U.sum(axis=1), 1 / (1 - 0.95), atol=1e-9)

    @settings(max_examples=100, deadline=None)
    @given(mdp_params, st.integers(0, 2**31 - 1))
    def test_identity(self, params, seed):
        mdp = _mdp(params)
        rng = np.random.default_rng(seed)
        m = rng.normal(size=mdp.shape)
        pi = rng.integers(0, mdp.num_actions, size=mdp.num_states)
        u = resolvent_apply(mdp, pi, m)
        back = u - mdp.gamma * apply_policy_transition(mdp, pi, u)
        assert linf_distance(back, m) <= 1e-10 * max(1.0, np.abs(u).max())

    def test_evaluate_policy_is_fixed_point(self):
        mdp = random_mdp(4, 3, 0.9, seed=24)
        pi = [1, 1, 0, 2]
        q = evaluate_policy(mdp, pi)
        assert np.allclose(q, mdp.rewards + mdp.gamma * apply_policy_transition(mdp, pi, q))


class TestNorms:
    def test_linf(self):
        q = np.random.default_rng(0).normal(size=(3, 2))
        assert linf_distance(q, q) == 0
        assert linf_distance(q, q + 0.3) == pytest.approx(0.3)

    def test_linf_loop_oracle(self):
        rng = np.random.default_rng(9)
        a, b = rng.normal(size=(4, 3)), rng.normal(size=(4, 3))
        expected = max(abs(a[i, j] - b[i, j]) for i in range(4) for j in range(3))
        assert linf_distance(a, b) == expected

    def test_linf_shape(self):
        with pytest.raises(DimensionError):
            linf_distance(np.zeros((2, 2)), np.zeros((2, 3)))

    def test_span(self):
        assert span_seminorm(np.full((2, 2), 3.0)) == 0
        assert span_seminorm(np.arange(6.0).reshape(3, 2)) == 5
        q = np.random.default_rng(1).normal(size=(3, 3))
        assert span_seminorm(q + 7.5) == pytest.approx(span_seminorm(q), abs=1e-12)

    def test_span_example(self):
        q = example1_qstar(0.9, 0.5)
        assert span_seminorm(q) == pytest.approx(q[0, 0] - q[1, 1], abs=1e-12)
