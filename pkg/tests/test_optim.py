import math

import numpy as np
import pytest

from vgdlab import policy_space as ps
from vgdlab.algos import policy_problem
from vgdlab.mdp import random_mdp
from vgdlab.optim import (Box, EuclideanNorm, FirstOrderProblem, IterateTrace, PolicySet, VgdParams,
                          bregman_bound, bregman_proximal_point, constrained_steepest_descent, csd_bound,
                          da_frank_wolfe, dafw_bound, dafw_bound_closed, frank_wolfe, fw_bound,
                          fw_bound_closed, measure_smoothness, measure_vgd, stationarity_bound,
                          stationarity_certificate, steepest_descent_magnitude, vgd_schedule)
from vgdlab.vgd import class_optimum, random_probes

from oracles import grid_minimize_simplex, qp_simplex_active_set


def simplex_quadratic(A, seed, norm="L2"):
    """``1/2 x'Qx + c'x`` on the simplex, as a one-state policy problem with fixed weights."""
    rng = np.random.default_rng(seed)
    B = rng.normal(size=(A, A))
    Q = B @ B.T / A
    c = rng.normal(size=A)
    cls = ps.full_simplex(1, A)
    prob = FirstOrderProblem(
        gradient=lambda x: (Q @ x[0] + c)[None],
        local_norm_at=lambda x: ps.WeightedNorm([1.0], norm),
        feasible_set=PolicySet(cls),
        objective=lambda x: 0.5 * x[0] @ Q @ x[0] + c @ x[0],
    )
    f_star, _ = qp_simplex_active_set(Q, c)
    return prob, Q, c, f_star, cls


def probe_points(cls, n, seed):
    return random_probes(cls, n, seed) + [cls.vertices(0)[i][None] for i in range(cls.num_actions)]


# --------------------------------------------------------------------------- types

def test_vgd_params_validation():
    VgdParams(1.0, 0.0)
    with pytest.raises(ValueError):
        VgdParams(0.5, 0.0)
    with pytest.raises(ValueError):
        VgdParams(1.0, -1e-3)


def test_trace_csv_header_and_length():
    prob = FirstOrderProblem(lambda x: x, lambda x: EuclideanNorm(), Box([-1.0], [1.0]), lambda x: 0.5 * float(x @ x))
    tr = constrained_steepest_descent(prob, np.array([1.0]), 0.5, 3)
    assert len(tr) == 4
    lines = tr.to_csv().splitlines()
    assert lines[0] == "k,f,gap_or_magnitude,inner_err"
    assert len(lines) == 5


# --------------------------------------------------------------------------- steepest descent

def test_csd_halving_on_box():
    prob = FirstOrderProblem(lambda x: x, lambda x: EuclideanNorm(), Box([-1.0], [1.0]), lambda x: 0.5 * float(x @ x))
    tr = constrained_steepest_descent(prob, np.array([1.0]), 0.5, 5)
    np.testing.assert_allclose([p[0] for p in tr.points], [1, 0.5, 0.25, 0.125, 0.0625, 0.03125])


def test_csd_stationary_start_is_constant():
    prob, *_ = simplex_quadratic(3, 0)
    zero = FirstOrderProblem(lambda x: np.zeros((1, 3)), prob.local_norm_at, prob.feasible_set, prob.objective)
    x1 = np.array([[0.2, 0.3, 0.5]])
    tr = constrained_steepest_descent(zero, x1, 0.3, 4)
    for p in tr.points:
        np.testing.assert_array_equal(p, x1)


def test_csd_errors():
    prob, *_ = simplex_quadratic(3, 0)
    with pytest.raises(ValueError):
        constrained_steepest_descent(prob, np.array([[0.5, 0.6, 0.0]]), 0.1, 2)
    with pytest.raises(ValueError):
        constrained_steepest_descent(prob, np.array([[1.0, 0.0, 0.0]]), 0.0, 2)


@pytest.mark.parametrize("norm", ["L1", "L2"])
def test_csd_quadratic_seed2_bound(norm):
    prob, Q, c, f_star, cls = simplex_quadratic(4, 2, norm)
    x1 = np.full((1, 4), 0.25)
    beta = measure_smoothness(prob, [(a, b) for a in probe_points(cls, 20, 0) for b in probe_points(cls, 5, 1)])
    eta = 1.0 / beta
    K = 64
    tr = constrained_steepest_descent(prob, x1, eta, K)
    nu = measure_vgd(prob, tr.points + probe_points(cls, 64, 3), f_star).nu
    fs = PolicySet(cls)
    M = max(prob.local_norm_at(p).dual(prob.gradient(p)) for p in tr.points)
    D = fs.diameter(prob.local_norm_at(x1))
    eps = max(tr.inner_err)
    sub = tr.f[-1] - f_star
    assert sub <= csd_bound(K, eta, nu, M, D, eps)
    # descent up to the inner error
    assert all(b <= a + eps + 1e-15 for a, b in zip(tr.f, tr.f[1:]))


def test_steepest_descent_magnitude_basics():
    box = Box(-10 * np.ones(2), 10 * np.ones(2))
    g = np.array([0.3, -0.4])
    prob = FirstOrderProblem(lambda x: g, lambda x: EuclideanNorm(), box, lambda x: float(g @ x))
    # unconstrained maximizer is feasible: value 1/2 ||g||^2
    assert steepest_descent_magnitude(prob, np.zeros(2), 1.0) == pytest.approx(0.125)
    zero = FirstOrderProblem(lambda x: np.zeros(2), lambda x: EuclideanNorm(), box)
    assert steepest_descent_magnitude(zero, np.zeros(2), 1.0) == 0.0


def test_steepest_descent_magnitude_vs_grid_seed9():
    rng = np.random.default_rng(9)
    G = rng.normal(size=(1, 3))
    x = rng.dirichlet(np.ones(3))[None]
    cls = ps.full_simplex(1, 3)
    eta = 0.5
    prob = FirstOrderProblem(lambda p: G, lambda p: ps.WeightedNorm([1.0], "L1"), PolicySet(cls))
    got = steepest_descent_magnitude(prob, x, eta)

    def neg(y):
        d = (x[0] - y) / eta
        return -(d @ G[0] - 0.5 * np.abs(d).sum(-1) ** 2)

    ref, _ = grid_minimize_simplex(neg, 3)
    assert got == pytest.approx(-ref, abs=1e-4)
    assert got >= -ref - 1e-9


# --------------------------------------------------------------------------- Frank-Wolfe

def test_vgd_schedule_values():
    sched = vgd_schedule(1.0)
    np.testing.assert_allclose([sched(k) for k in range(1, 5)], [2 / 3, 1 / 2, 2 / 5, 1 / 3], rtol=0, atol=1e-15)
    with pytest.raises(ValueError):
        vgd_schedule(0.0)


def test_fw_clamps_large_steps_with_warning():
    prob, *_ = simplex_quadratic(3, 1)
    with pytest.warns(RuntimeWarning, match="clamped"):
        tr = frank_wolfe(prob, np.full((1, 3), 1 / 3), vgd_schedule(5.0), K=3)
    assert tr.steps[0] == 1.0
    with pytest.raises(ValueError):
        frank_wolfe(prob, np.full((1, 3), 1 / 3), [0.5, -0.1], K=2)


def test_fw_optimal_start_linear_is_constant():
    c = np.array([[0.3, 0.1, 0.7]])
    cls = ps.full_simplex(1, 3)
    prob = FirstOrderProblem(lambda x: c, lambda x: ps.WeightedNorm([1.0], "L1"), PolicySet(cls),
                             lambda x: float(np.sum(c * x)))
    x1 = np.array([[0.0, 1.0, 0.0]])
    tr = frank_wolfe(prob, x1, vgd_schedule(1.0), K=6)
    for p in tr.points:
        np.testing.assert_array_equal(p, x1)
    tr2 = da_frank_wolfe(prob, x1, vgd_schedule(1.0), K=6)
    for p in tr2.points:
        np.testing.assert_array_equal(p, x1)


def test_fw_triangle_seed4_bound():
    prob, Q, c, f_star, cls = simplex_quadratic(3, 4, "L2")
    x1 = np.array([[1.0, 0.0, 0.0]])
    K = 64
    nu_s = measure_vgd(prob, probe_points(cls, 200, 0), f_star).nu
    tr = frank_wolfe(prob, x1, vgd_schedule(nu_s), K=K)
    nu = measure_vgd(prob, tr.points + probe_points(cls, 64, 1), f_star).nu
    assert nu <= nu_s  # convex f: nu = 1 on every point
    beta = measure_smoothness(prob, list(zip(tr.points, tr.points[1:])) +
                              [(a, b) for a in probe_points(cls, 10, 2) for b in probe_points(cls, 10, 3)])
    D = PolicySet(cls).diameter(prob.local_norm_at(x1))
    E1 = tr.f[0] - f_star
    sub = tr.f[-1] - f_star
    assert sub <= fw_bound_closed(K, nu_s, beta, D, E1)
    assert sub <= fw_bound(tr.steps, nu_s, beta, D, E1) + 1e-12
    assert min(tr.diag) >= -1e-12


def test_dafw_exact_projection_reduces_to_fw():
    prob, *_ = simplex_quadratic(4, 5, "L1")
    x1 = np.full((1, 4), 0.25)
    a = frank_wolfe(prob, x1, vgd_schedule(1.0), K=20)
    b = da_frank_wolfe(prob, x1, vgd_schedule(1.0), K=20)
    for p, q in zip(a.points, b.points):
        np.testing.assert_allclose(p, q, atol=1e-9)


def test_dafw_policy_instance_seed6():
    mdp = random_mdp(4, 3, 0.5, 6)
    cls = ps.random_vertex_class(4, 3, 3, 6)
    prob = policy_problem(mdp, cls, "L1")
    star = class_optimum(mdp, cls).value
    probes = random_probes(cls, 128, 6)
    nu_s = measure_vgd(prob, probes, star).nu
    K = 32
    x1 = ps.uniform_member(cls)
    tr = da_frank_wolfe(prob, x1, vgd_schedule(nu_s), prox_tol=1e-8, K=K)
    nu = measure_vgd(prob, tr.points + probes[:32], star).nu
    pairs = list(zip(tr.points, tr.points[1:])) + [(p, probes[i]) for i, p in enumerate(tr.points)]
    beta = measure_smoothness(prob, pairs)
    M = max(prob.local_norm_at(p).dual(prob.gradient(p)) for p in tr.points)
    D = max(PolicySet(cls).diameter(prob.local_norm_at(p)) for p in tr.points)
    eps_t = max(tr.inner_err)
    sub = tr.f[-1] - star
    nu_b = max(nu, nu_s)
    assert sub <= dafw_bound(tr.steps, nu_b, beta, D, M, tr.f[0] - star, 0.0, eps_t) + 1e-12
    if nu <= nu_s:
        assert sub <= dafw_bound_closed(K, nu_s, beta, D, M, 0.0, eps_t)


# --------------------------------------------------------------------------- Bregman

def test_bregman_equals_l2_steepest_descent():
    prob1, *_ = simplex_quadratic(3, 7, "L1")
    prob2, *_ = simplex_quadratic(3, 7, "L2")
    x1 = np.full((1, 3), 1 / 3)
    a = bregman_proximal_point(prob1, x1, 0.3, 15)
    b = constrained_steepest_descent(prob2, x1, 0.3, 15)
    for p, q in zip(a.points, b.points):
        np.testing.assert_array_equal(p, q)
    assert a.f == b.f


def test_bregman_zero_gradient_is_constant():
    prob, *_ = simplex_quadratic(3, 0)
    zero = FirstOrderProblem(lambda x: np.zeros((1, 3)), prob.local_norm_at, prob.feasible_set, prob.objective)
    x1 = np.array([[0.1, 0.1, 0.8]])
    for p in bregman_proximal_point(zero, x1, 0.5, 3).points:
        np.testing.assert_array_equal(p, x1)


def test_bregman_quadratic_seed8_bound():
    prob, Q, c, f_star, cls = simplex_quadratic(3, 8, "L2")
    _, grid_xstar = grid_minimize_simplex(lambda X: 0.5 * np.einsum("ni,ij,nj->n", X, Q, X) + X @ c, 3)
    assert prob.f(grid_xstar[None]) == pytest.approx(f_star, abs=1e-8)
    x1 = np.array([[0.0, 0.0, 1.0]])
    beta = measure_smoothness(prob, [(a, b) for a in probe_points(cls, 20, 0) for b in probe_points(cls, 5, 1)])
    eta = 1.0 / (2.0 * beta)
    K = 64
    tr = bregman_proximal_point(prob, x1, eta, K)
    nu = measure_vgd(prob, tr.points + probe_points(cls, 64, 2), f_star).nu
    M = max(prob.local_norm_at(p).dual(prob.gradient(p)) for p in tr.points)
    D = PolicySet(cls).diameter(prob.local_norm_at(x1))
    assert tr.f[-1] - f_star <= bregman_bound(K, eta, nu, M, D, 1.0, max(tr.inner_err))


# --------------------------------------------------------------------------- stationarity

def test_stationarity_trivial_cases():
    c = np.array([[0.3, 0.1, 0.7]])
    cls = ps.full_simplex(1, 3)
    prob = FirstOrderProblem(lambda x: c, lambda x: ps.WeightedNorm([1.0], "L2"), PolicySet(cls),
                             lambda x: float(np.sum(c * x)))
    tr = constrained_steepest_descent(prob, np.array([[0.0, 1.0, 0.0]]), 0.5, 3)
    assert stationarity_certificate(prob, tr) == 0.0
    with pytest.raises(ValueError):
        stationarity_certificate(prob, IterateTrace("magnitude"))


def test_stationarity_cubic_seed12():
    rng = np.random.default_rng(12)
    a, b, c = rng.uniform(-2, 2, size=3)
    f = lambda x: float(a * x[0] ** 3 + b * x[0] ** 2 + c * x[0])
    grad = lambda x: np.array([3 * a * x[0] ** 2 + 2 * b * x[0] + c])
    prob = FirstOrderProblem(grad, lambda x: EuclideanNorm(), Box([0.0], [1.0]), f)
    xs = np.linspace(0, 1, 100_001)
    f_star = float(np.min(a * xs**3 + b * xs**2 + c * xs))
    beta = 6 * abs(a) + 2 * abs(b)
    eta = 1.0 / beta
    K = 100
    x1 = np.array([0.5])
    tr = constrained_steepest_descent(prob, x1, eta, K)
    cert = stationarity_certificate(prob, tr)
    assert 0.0 <= cert <= stationarity_bound(f(x1) - f_star, eta, K, 1.0, max(tr.inner_err))


# --------------------------------------------------------------------------- bound formulas

def test_bound_formulas_floor_constants_at_one():
    assert csd_bound(10, 0.5, 0.2, 0.1, 0.3) == pytest.approx(8.0 / 5.0)
    assert fw_bound_closed(8, 1.0, 2.0, 1.0, 0.0) == pytest.approx(4.0 / 10)
    # recursive form with the vgd schedule never exceeds the closed form when E1 <= 2 nu^2 beta D^2
    steps = [min(1.0, 2 * 3.0 / (k + 2)) for k in range(1, 65)]
    assert fw_bound(steps, 3.0, 1.5, 1.0, 0.5) <= fw_bound_closed(64, 3.0, 1.5, 1.0, 0.5) + 1e-12
    assert math.isfinite(bregman_bound(5, 0.1, 1.0, 1.0, 1.0))
