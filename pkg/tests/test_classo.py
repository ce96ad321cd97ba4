import itertools
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conicon.classo import (CLassoConfig, CLassoError, EmptyGroupError, classify, classo_pls,
                            full_objective, ic_value, information_criterion, post_lasso)
from conicon.panel import PanelData, pooled_ols, unit_ols, within_demean
from conicon.simulation import ALPHA0, CLassoDgpSpec, correct_ratio, default_lambda_classo, dgp_classo
from conicon.solver import SolverOptions

import oracles


def dgp1(n, T, seed):
    raw, labels = dgp_classo(CLassoDgpSpec(n=n, T=T, seed=seed))
    return within_demean(raw), labels


def two_group_panel(seed, n=20, T=10, noise=0.01):
    rng = np.random.default_rng(seed)
    truth = np.array([[0.0, 0.0], [10.0 / math.sqrt(2), 10.0 / math.sqrt(2)]])
    g = np.repeat([0, 1], n // 2)
    x = rng.normal(size=(n, T, 2))
    y = np.einsum("itp,ip->it", x, truth[g]) + noise * rng.normal(size=(n, T))
    return within_demean(PanelData(y, x)), g + 1


# -- classify ----------------------------------------------------------------------

def test_classify_exact_and_tie():
    alpha = np.array([[0.0, 0.0], [2.0, 0.0]])
    assert list(classify([[2.0, 0.0], [0.0, 0.0]], alpha)) == [2, 1]
    assert list(classify([[1.0, 0.0]], alpha)) == [1]


@given(seed=st.integers(0, 10_000))
def test_classify_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    beta, alpha = rng.normal(size=(15, 2)), rng.normal(size=(3, 2))
    assert np.array_equal(classify(beta, alpha), oracles.brute_classify(beta, alpha))


# -- post_lasso --------------------------------------------------------------------

def test_post_lasso_noiseless_single_group():
    rng = np.random.default_rng(0)
    b0 = np.array([0.7, -1.3])
    x = rng.normal(size=(8, 6, 2))
    P = PanelData(np.einsum("itp,p->it", x, b0), x)
    assert np.max(np.abs(post_lasso(P, np.ones(8, dtype=int))[0] - b0)) <= 1e-10


def test_post_lasso_single_unit_group_is_unit_ols():
    P, _ = dgp1(12, 8, 3)
    labels = np.array([1] * 11 + [2])
    assert np.allclose(post_lasso(P, labels)[1], unit_ols(P)[11], atol=1e-12)


def test_post_lasso_empty_group():
    P, _ = dgp1(6, 5, 4)
    with pytest.raises(EmptyGroupError) as ei:
        post_lasso(P, np.array([1, 1, 3, 3, 1, 3]), K=3)
    assert ei.value.groups == (2,)


def test_post_lasso_with_true_labels_improves_with_T():
    errs = []
    for T in (15, 25, 50):
        sq = []
        for seed in range(10):
            P, g = dgp1(100, T, seed)
            a = post_lasso(P, g)
            sq.append(np.sum((a - ALPHA0) ** 2))
        errs.append(math.sqrt(np.mean(sq)))
    assert errs[0] > errs[1] > errs[2]


# -- classo_pls ----------------------------------------------------------------------

def test_config_validation():
    with pytest.raises(ValueError):
        CLassoConfig(K=0, lam=1.0)
    with pytest.raises(ValueError):
        CLassoConfig(K=1, lam=-1.0)
    with pytest.raises(ValueError):
        CLassoConfig(K=1, lam=1.0, conv_tol=0.0)


def test_k_above_n_rejected():
    P, _ = dgp1(3, 5, 0)
    with pytest.raises(ValueError):
        classo_pls(P, CLassoConfig(K=4, lam=0.1))


def test_k1_penalty_dominance_trend():
    # at lam = 0 the center carries no cost, so the path starts above zero;
    # the penalty sum is monotone along the path, the max shrinks to zero
    P, _ = dgp1(10, 8, 5)
    total, spread = [], []
    for lam in (0.05, 0.2, 0.5, 2.0, 5.0, 500.0):
        r = classo_pls(P, CLassoConfig(K=1, lam=lam))
        d = np.linalg.norm(r.beta - r.alpha[0], axis=1)
        total.append(d.sum())
        spread.append(d.max())
    assert all(b <= a + 1e-6 for a, b in zip(total, total[1:]))
    assert spread[-1] <= 1e-5 < spread[0]


def test_k1_post_refit_is_pooled_ols():
    P, _ = dgp1(10, 8, 6)
    r = classo_pls(P, CLassoConfig(K=1, lam=0.3))
    assert np.max(np.abs(r.alpha_post[0] - pooled_ols(P))) <= 1e-10


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_well_separated_groups_recovered(seed):
    P, g = two_group_panel(seed)
    r = classo_pls(P, CLassoConfig(K=2, lam=default_lambda_classo(P)))
    assert correct_ratio(r.groups, g) == 1.0
    # per-unit OLS clustering reaches the same partition
    b0 = unit_ols(P)
    ols_lab = classify(b0, np.array([b0[g == 1].mean(0), b0[g == 2].mean(0)]))
    assert correct_ratio(r.groups, ols_lab) == 1.0


@pytest.mark.parametrize("seed", [11, 12])
def test_endpoint_objective_improves(seed):
    P, _ = dgp1(40, 10, seed)
    lam = default_lambda_classo(P)
    r = classo_pls(P, CLassoConfig(K=3, lam=lam))
    assert r.objective_trace[-1] <= r.objective_trace[0]
    assert r.objective_trace[-1] == pytest.approx(full_objective(P, r.beta, r.alpha, lam), rel=1e-12)


def test_result_is_canonical_and_label_permutation_invariant():
    P, _ = dgp1(30, 10, 13)
    r = classo_pls(P, CLassoConfig(K=3, lam=default_lambda_classo(P)))
    assert np.all(np.diff(r.alpha[:, 0]) >= 0)
    for perm in itertools.permutations([1, 2, 3]):
        q = r.relabel(perm).canonical()
        assert np.array_equal(q.groups, r.groups)
        assert np.array_equal(q.alpha, r.alpha)


def test_unit_permutation_equivariance():
    P, _ = dgp1(30, 10, 14)
    cfg = CLassoConfig(K=3, lam=default_lambda_classo(P))
    perm = np.random.default_rng(0).permutation(P.n)
    r1 = classo_pls(P, cfg)
    r2 = classo_pls(P.take(perm), cfg)
    assert np.max(np.abs(r2.alpha - r1.alpha)) <= 1e-6
    assert np.max(np.abs(r2.beta - r1.beta[perm])) <= 1e-6
    assert np.array_equal(r2.groups, r1.groups[perm])


def test_substep_failure_reports_coordinates():
    P, _ = dgp1(10, 6, 15)
    cfg = CLassoConfig(K=2, lam=0.5, solver=SolverOptions(max_iter=2, phase_one=False))
    with pytest.raises(CLassoError) as ei:
        classo_pls(P, cfg)
    assert (ei.value.round, ei.value.group) == (1, 1)


def test_demeans_raw_input():
    raw, _ = dgp_classo(CLassoDgpSpec(n=10, T=6, seed=16))
    cfg = CLassoConfig(K=2, lam=0.2)
    r1 = classo_pls(raw, cfg)
    r2 = classo_pls(within_demean(raw), cfg)
    assert np.array_equal(r1.groups, r2.groups)
    assert np.allclose(r1.alpha, r2.alpha, atol=1e-12)


# -- information criterion -----------------------------------------------------------

def test_ic_value_formula():
    P, g = dgp1(20, 6, 17)
    a = post_lasso(P, g)
    ic, s2 = ic_value(P, g, a)
    resid = P.y - np.einsum("itp,ip->it", P.x, a[g - 1])
    assert s2 == pytest.approx(np.mean(resid ** 2), rel=1e-12)
    assert ic == pytest.approx(math.log(s2) + (2 / 3) / math.sqrt(120) * 2 * 3, rel=1e-12)


def test_ic_single_cell_grid():
    P, _ = dgp1(15, 6, 18)
    K, lam, table = information_criterion(P, [2], [0.3], CLassoConfig(K=1, lam=0.0))
    assert (K, lam) == (2, 0.3) and len(table) == 1 and table[0]["ok"]


def test_ic_picks_k1_for_homogeneous_panel():
    rng = np.random.default_rng(19)
    x = rng.normal(size=(30, 10, 2))
    y = np.einsum("itp,p->it", x, [1.0, 1.0]) + rng.normal(size=(30, 10))
    P = within_demean(PanelData(y, x))
    K, _, _ = information_criterion(P, [1, 2, 3], [default_lambda_classo(P)],
                                    CLassoConfig(K=1, lam=0.0))
    assert K == 1


def test_ic_rejects_empty_grid():
    P, _ = dgp1(6, 5, 20)
    with pytest.raises(ValueError):
        information_criterion(P, [], [0.1], CLassoConfig(K=1, lam=0.0))
