import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conicon.formulations import MomentMatrix, rel_inner_conic
from conicon.problem import ConicProblem, QuadCone, SeparableTerm
from conicon.solver import InvalidProblemError, SolverOptions, Status, kkt_residuals, solve

import oracles
from instances import random_lp, random_socp, simplex_log


def pythagoras():
    A = np.array([[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    return ConicProblem(c=[1.0, 0.0, 0.0], A=A, blc=[3.0, 4.0], buc=[3.0, 4.0],
                        cones=[QuadCone([0, 1, 2])])


def test_bound_active_lp():
    p = ConicProblem(c=[1.0], A=np.zeros((0, 1)), blx=[1.0])
    s = solve(p)
    assert s.status is Status.OPTIMAL
    assert s.x[0] == pytest.approx(1.0, abs=1e-8)
    assert s.objective == pytest.approx(1.0, abs=1e-8)


def test_pythagorean_cone():
    s = solve(pythagoras())
    assert s.status is Status.OPTIMAL
    assert s.objective == pytest.approx(5.0, abs=1e-7)
    rep = kkt_residuals(pythagoras(), s.x, s.y)
    assert max(rep.primal, rep.dual_rel, rep.complementarity_rel) <= 1e-8


def test_kkt_primal_residual_sees_perturbation():
    p = pythagoras()
    s = solve(p)
    x = s.x.copy()
    x[1] += 0.1
    assert kkt_residuals(p, x, s.y).primal >= 0.1 - 1e-12


def test_kkt_residuals_dimension_mismatch():
    with pytest.raises(ValueError):
        kkt_residuals(pythagoras(), np.zeros(2), np.zeros(2))


@pytest.mark.parametrize("n", [2, 5, 50])
def test_simplex_log_is_uniform(n):
    s = solve(simplex_log(n))
    assert s.status is Status.OPTIMAL
    assert np.max(np.abs(s.x - 1.0 / n)) <= 1e-8
    assert s.objective == pytest.approx(n * math.log(1.0 / n), abs=1e-8)


def test_five_weights_objective():
    s = solve(simplex_log(5))
    assert s.objective == pytest.approx(5 * math.log(0.2), abs=1e-9)


def test_random_lps_match_vertex_enumeration():
    rng = np.random.default_rng(11)
    for _ in range(25):
        p, v = random_lp(rng, max_vars=6)
        s = solve(p)
        assert s.status is Status.OPTIMAL
        assert abs(s.objective - v) <= 1e-6
        rep = kkt_residuals(p, s.x, s.y)
        assert rep.primal <= 1e-6 and rep.dual_rel <= 1e-6


def test_random_socps_match_projected_gradient():
    rng = np.random.default_rng(12)
    for _ in range(10):
        p, v, _ = random_socp(rng)
        s = solve(p)
        assert s.status is Status.OPTIMAL
        assert abs(s.objective - v) <= 1e-5


def test_primal_infeasible_lp():
    p = ConicProblem(c=[1.0, 1.0], A=[[1.0, 1.0]], blc=[3.0], buc=[3.0], blx=[0, 0], bux=[1, 1])
    s = solve(p)
    assert s.status is Status.PRIMAL_INFEASIBLE
    assert s.certificate is not None


def test_unbounded_lp():
    p = ConicProblem(c=[-1.0, 0.0], A=[[0.0, 1.0]], blc=[1.0], buc=[1.0], blx=[0, 0])
    assert solve(p).status is Status.DUAL_INFEASIBLE


def test_rel_inner_overdetermined_is_infeasible():
    rng = np.random.default_rng(0)
    H = rng.normal(size=(5, 9))
    s = solve(rel_inner_conic(MomentMatrix(H=H, sigma=np.ones(9)), 0.0))
    assert s.status is Status.PRIMAL_INFEASIBLE


def test_max_iter_status():
    s = solve(pythagoras(), SolverOptions(max_iter=1, phase_one=False))
    assert s.status is Status.MAX_ITER


def test_invalid_problem_raises():
    p = pythagoras()
    p.cones = [QuadCone([0, 7])]
    with pytest.raises(InvalidProblemError):
        solve(p)


def test_fixed_variables_are_honoured():
    p = ConicProblem(c=[1.0, 1.0], A=[[1.0, 1.0]], blc=[2.0], buc=[np.inf],
                     blx=[0.5, 0.0], bux=[0.5, np.inf])
    s = solve(p)
    assert s.x[0] == 0.5
    assert s.objective == pytest.approx(2.0, abs=1e-8)


def test_exp_term():
    # min exp(x) - 2x  ->  x = log 2
    p = ConicProblem(c=[-2.0], A=np.zeros((0, 1)), separable=[SeparableTerm("EXP", 0, 1.0)])
    s = solve(p)
    assert s.status is Status.OPTIMAL
    assert s.x[0] == pytest.approx(math.log(2.0), abs=1e-7)


def test_optimal_solutions_satisfy_gap_and_cones():
    rng = np.random.default_rng(5)
    for _ in range(10):
        p, _, _ = random_socp(rng)
        s = solve(p)
        assert s.gap <= 1e-8
        for cn in p.cones:
            assert np.linalg.norm(s.x[list(cn.tail)]) <= s.x[cn.head] + 1e-8
        assert abs(s.objective - s.dual_objective) / (1 + abs(s.objective)) <= 1e-8


@given(seed=st.integers(0, 10_000), kappa=st.floats(0.1, 20.0))
def test_scaling_c_scales_objective_and_keeps_argmin(seed, kappa):
    rng = np.random.default_rng(seed)
    p, _ = random_lp(rng, max_vars=5)
    s1 = solve(p)
    p.c = p.c * kappa
    s2 = solve(p)
    assert s1.ok and s2.ok
    assert s2.objective == pytest.approx(kappa * s1.objective, rel=1e-7, abs=1e-7)
    # argmin comparison only makes sense when the vertex optimum is unique
    if np.max(np.abs(s1.x - s2.x)) > 1e-5:
        v1 = p.c @ s1.x
        v2 = p.c @ s2.x
        assert abs(v1 - v2) <= 1e-6 * (1 + abs(v1))  # tie: both optimal


@given(n=st.integers(2, 30))
def test_uniform_weights_property(n):
    s = solve(simplex_log(n))
    assert np.max(np.abs(s.x - 1.0 / n)) <= 1e-8
