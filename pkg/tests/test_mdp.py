import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from vgdlab.config import TOL
from vgdlab.envs import make_env
from vgdlab.mdp import (InvalidMdpError, InvalidPolicyError, NumericalError, TabularMdp, check_policy,
                        load_mdp, mdp_from_dict, mdp_to_dict, occupancy, policy_evaluation,
                        policy_gradient, random_mdp, save_mdp, uniform_policy, value_difference)

from oracles import mc_occupancy, value_iteration


def one_state(r, gamma=0.5):
    r = np.atleast_1d(np.asarray(r, dtype=float))
    return TabularMdp(np.ones((1, r.size, 1)), r[None, :], gamma, np.ones(1))


# --------------------------------------------------------------------------- construction

def test_invariants_are_enforced():
    P = np.ones((1, 1, 1))
    with pytest.raises(InvalidMdpError):
        TabularMdp(P * 1.1, np.zeros((1, 1)), 0.5, np.ones(1))
    with pytest.raises(InvalidMdpError):
        TabularMdp(P, np.full((1, 1), 1.5), 0.5, np.ones(1))
    with pytest.raises(InvalidMdpError):
        TabularMdp(P, np.zeros((1, 1)), 1.0, np.ones(1))
    with pytest.raises(InvalidMdpError):
        TabularMdp(P, np.zeros((1, 1)), 0.5, np.array([0.9]))


def test_arrays_are_read_only():
    m = random_mdp(3, 2, 0.5, 0)
    with pytest.raises(ValueError):
        m.rewards[0, 0] = 0.3


def test_check_policy_rejects_bad_rows():
    m = random_mdp(2, 2, 0.5, 0)
    with pytest.raises(InvalidPolicyError):
        check_policy(m, [[0.5, 0.6], [0.5, 0.5]])
    with pytest.raises(InvalidPolicyError):
        check_policy(m, np.ones((3, 2)) / 2)


# --------------------------------------------------------------------------- evaluation

def test_geometric_series():
    ev = policy_evaluation(one_state(1.0), [[1.0]])
    assert ev.v[0] == pytest.approx(2.0, abs=1e-15)
    assert ev.q[0, 0] == pytest.approx(2.0, abs=1e-15)


def test_zero_cost_is_zero():
    m = make_env("zero_cost")
    ev = policy_evaluation(m, uniform_policy(m.num_states, m.num_actions))
    assert np.all(ev.v == 0) and np.all(ev.q == 0)


def test_matches_value_iteration_seed7():
    m = random_mdp(5, 3, 0.5, 7)
    pi = uniform_policy(5, 3)
    q_ref = value_iteration(m.transitions, m.rewards, m.discount, pi)
    ev = policy_evaluation(m, pi)
    np.testing.assert_allclose(ev.q, q_ref, atol=1e-9, rtol=0)
    np.testing.assert_allclose(ev.v, (pi * q_ref).sum(1), atol=1e-9, rtol=0)


def test_value_is_inner_product_of_q_and_policy():
    m = random_mdp(6, 4, 0.9, 3)
    pi = np.random.default_rng(0).dirichlet(np.ones(4), size=6)
    ev = policy_evaluation(m, pi)
    np.testing.assert_allclose(ev.v, (ev.q * pi).sum(1), atol=1e-10)
    assert ev.scalar_value == pytest.approx(m.initial_dist @ ev.v)


@settings(max_examples=30, deadline=None)
@given(S=st.integers(1, 8), A=st.integers(1, 4), gamma=st.sampled_from([0.1, 0.5, 0.9, 0.99]),
       seed=st.integers(0, 10_000))
def test_bellman_residual_and_range(S, A, gamma, seed):
    m = random_mdp(S, A, gamma, seed)
    pi = np.random.default_rng(seed).dirichlet(np.ones(A), size=S)
    ev = policy_evaluation(m, pi)
    resid = ev.q - (m.rewards + gamma * m.transitions @ (pi * ev.q).sum(1))
    assert np.abs(resid).max() <= TOL.bellman_residual
    assert ev.q.min() >= 0 and ev.q.max() <= m.horizon + 1e-9


# --------------------------------------------------------------------------- occupancy

def test_occupancy_single_state():
    mu = occupancy(one_state([0.3, 0.4]), [[0.5, 0.5]]).mu
    np.testing.assert_array_equal(mu, [1.0])


def test_occupancy_absorbing_chain():
    P = np.zeros((2, 1, 2))
    P[0, 0, 1] = P[1, 0, 1] = 1.0
    m = TabularMdp(P, np.zeros((2, 1)), 0.5, np.array([1.0, 0.0]))
    np.testing.assert_allclose(occupancy(m, [[1.0], [1.0]]).mu, [0.5, 0.5], atol=1e-15)


def test_occupancy_custom_start():
    m = random_mdp(4, 2, 0.7, 1)
    pi = uniform_policy(4, 2)
    start = np.array([0.0, 1.0, 0.0, 0.0])
    occ = occupancy(m, pi, start)
    assert occ.mu[1] >= (1 - 0.7)
    np.testing.assert_array_equal(occ.start_dist, start)
    with pytest.raises(InvalidMdpError):
        occupancy(m, pi, np.ones(3) / 3)


def test_occupancy_matches_monte_carlo():
    m = random_mdp(5, 3, 0.5, 7)
    pi = uniform_policy(5, 3)
    emp = mc_occupancy(m, pi, 1_000_000, seed=123)
    tv = 0.5 * np.abs(emp - occupancy(m, pi).mu).sum()
    assert tv <= 0.01


@settings(max_examples=30, deadline=None)
@given(S=st.integers(1, 8), A=st.integers(1, 4), seed=st.integers(0, 10_000))
def test_occupancy_floor_and_mass(S, A, seed):
    m = random_mdp(S, A, 0.8, seed)
    pi = np.random.default_rng(seed).dirichlet(np.ones(A), size=S)
    mu = occupancy(m, pi).mu
    assert abs(mu.sum() - 1) <= TOL.occupancy_sum
    assert np.all(mu - 0.2 * m.initial_dist >= -1e-12)


# --------------------------------------------------------------------------- gradient

def test_gradient_zero_cost():
    m = make_env("zero_cost")
    assert not np.any(policy_gradient(m, uniform_policy(m.num_states, m.num_actions)))


def test_gradient_one_state_closed_form():
    m = one_state([0.0, 1.0])
    pi = np.array([[0.3, 0.7]])
    # V = 2 * <r, pi> and Q_a = r_a + V / 2 with gamma = 1/2
    v = 2 * 0.7
    q = np.array([0.0 + 0.5 * v, 1.0 + 0.5 * v])
    np.testing.assert_allclose(policy_gradient(m, pi), 2.0 * q[None, :], atol=1e-14)


def test_gradient_finite_differences_seed7():
    m = random_mdp(5, 3, 0.5, 7)
    rng = np.random.default_rng(0)
    pi = rng.dirichlet(np.ones(3), size=5) * 0.85 + 0.05
    G = policy_gradient(m, pi)
    h = TOL.fd_step
    for _ in range(20):
        d = rng.dirichlet(np.ones(3), size=5) - pi
        fd = (policy_evaluation(m, pi + h * d).scalar_value - policy_evaluation(m, pi - h * d).scalar_value) / (2 * h)
        assert abs(fd - np.sum(G * d)) <= 1e-4 * abs(np.sum(G * d))


# --------------------------------------------------------------------------- value difference

def test_value_difference_same_policy_is_zero():
    m = random_mdp(4, 2, 0.5, 2)
    pi = uniform_policy(4, 2)
    assert value_difference(m, pi, pi) == pytest.approx(0.0, abs=1e-15)


def test_value_difference_one_state():
    m = one_state([0.0, 1.0])
    d = value_difference(m, [[1.0, 0.0]], [[0.0, 1.0]])
    q0 = policy_evaluation(m, [[1.0, 0.0]]).scalar_value
    q1 = policy_evaluation(m, [[0.0, 1.0]]).scalar_value
    assert d == pytest.approx(q1 - q0, abs=1e-12)
    assert d == pytest.approx(2.0, abs=1e-12)


def test_value_difference_random_pairs():
    m = random_mdp(5, 3, 0.5, 7)
    rng = np.random.default_rng(1)
    for _ in range(100):
        a, b = rng.dirichlet(np.ones(3), size=5), rng.dirichlet(np.ones(3), size=5)
        direct = policy_evaluation(m, b).scalar_value - policy_evaluation(m, a).scalar_value
        assert abs(value_difference(m, a, b) - direct) <= 1e-9


def test_value_difference_other_start():
    m = random_mdp(4, 2, 0.9, 4)
    rng = np.random.default_rng(2)
    a, b = rng.dirichlet(np.ones(2), size=4), rng.dirichlet(np.ones(2), size=4)
    rho = np.array([0.1, 0.2, 0.3, 0.4])
    direct = rho @ (policy_evaluation(m, b).v - policy_evaluation(m, a).v)
    assert value_difference(m, a, b, rho) == pytest.approx(direct, abs=1e-9)


# --------------------------------------------------------------------------- io

def test_json_round_trip(tmp_path):
    m = random_mdp(3, 2, 0.9, 5)
    save_mdp(m, tmp_path / "m.json")
    back = load_mdp(tmp_path / "m.json")
    np.testing.assert_array_equal(back.transitions, m.transitions)
    np.testing.assert_array_equal(back.rewards, m.rewards)
    assert back.discount == m.discount


def test_reward_kind_converts_to_cost():
    d = mdp_to_dict(one_state([0.25, 1.0]))
    d["reward_kind"] = "reward"
    np.testing.assert_allclose(mdp_from_dict(d).rewards, [[0.75, 0.0]])


def test_malformed_documents(tmp_path):
    d = mdp_to_dict(random_mdp(2, 2, 0.5, 0))
    bad = dict(d)
    del bad["rho0"]
    with pytest.raises(InvalidMdpError, match="rho0"):
        mdp_from_dict(bad)
    bad = dict(d, S=3)
    with pytest.raises(InvalidMdpError):
        mdp_from_dict(bad)
    (tmp_path / "x.json").write_text("{not json")
    with pytest.raises(InvalidMdpError):
        load_mdp(tmp_path / "x.json")


def test_numerical_error_is_runtime_error():
    assert issubclass(NumericalError, RuntimeError)
    json.dumps(mdp_to_dict(make_env("chain")))
