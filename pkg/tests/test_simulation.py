import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conicon import simulation as sim
from conicon.panel import PanelData, unit_ols, within_demean
from conicon.simulation import (ALPHA0, REL_SIGMA, CLassoDgpSpec, RelDgpSpec, StudyAbortError,
                                StudyError, StudySpec, alpha_sq_error, bias_rmse, correct_ratio,
                                default_lambda_classo, dgp_classo, dgp_rel, load_study,
                                rmse_alpha, run_replications, summarize, summary_csv, summary_json)

import oracles


# -- DGPs ----------------------------------------------------------------------------

def test_group_sizes():
    assert list(CLassoDgpSpec(n=10, T=5).group_sizes()) == [3, 3, 4]
    assert list(CLassoDgpSpec(n=100, T=5).group_sizes()) == [30, 30, 40]
    assert list(CLassoDgpSpec(n=7, T=5).group_sizes()) == [2, 2, 3]
    with pytest.raises(ValueError):
        CLassoDgpSpec(n=10, T=5, proportions=(0.5, 0.6, -0.1))


def test_dgp_classo_deterministic():
    a, la = dgp_classo(CLassoDgpSpec(n=10, T=5, seed=3))
    b, lb = dgp_classo(CLassoDgpSpec(n=10, T=5, seed=3))
    c, _ = dgp_classo(CLassoDgpSpec(n=10, T=5, seed=4))
    assert np.array_equal(a.y, b.y) and np.array_equal(a.x, b.x) and np.array_equal(la, lb)
    assert not np.array_equal(a.y, c.y)
    assert list(np.bincount(la)[1:]) == [3, 3, 4]


def test_dgp_classo_large_sample_ols_means():
    raw, lab = dgp_classo(CLassoDgpSpec(n=10_000, T=50, seed=0))
    b = unit_ols(within_demean(raw))
    for k in range(3):
        assert np.max(np.abs(b[lab == k + 1].mean(axis=0) - ALPHA0[k])) <= 0.05


def test_default_lambda_classo_formula():
    assert default_lambda_classo(within_demean(PanelData(np.full((3, 4), 7.0), np.ones((3, 4, 1))))) == 0.0
    # sample variance 2 with T = 8 gives 0.5
    rng = np.random.default_rng(0)
    y = rng.normal(size=(4, 8))
    y -= y.mean(axis=1, keepdims=True)
    y *= math.sqrt(2.0 / y.var(ddof=1))
    P = PanelData(y, np.ones((4, 8, 1)), demeaned=True)
    assert default_lambda_classo(P) == pytest.approx(0.5, rel=1e-12)


def test_default_lambda_classo_expectation():
    # demeaned y = beta_i' e~ + eps~, each demeaned shock has variance (T-1)/T
    n, T = 100, 15
    sizes = np.array([30, 30, 40])
    b2 = np.array([sum(v * v for v in a) for a in ALPHA0])
    ey2 = (T - 1) / T * (np.sum(sizes / n * b2) + 1.0)
    expected = 0.5 * ey2 * n * T / (n * T - 1) * T ** (-1 / 3)
    lams = [default_lambda_classo(dgp_classo(CLassoDgpSpec(n=n, T=T, seed=s))[0]) for s in range(100)]
    assert abs(np.mean(lams) / expected - 1) <= 0.05


def test_rel_spec_validation():
    with pytest.raises(ValueError):
        RelDgpSpec(n=10, m=3)
    with pytest.raises(ValueError):
        RelDgpSpec(n=10, m=5, sigma=((1, 2, 0), (2, 1, 0), (0, 0, 1)))


def test_dgp_rel_moments():
    d = dgp_rel(RelDgpSpec(n=100_000, m=6, seed=1))
    e0 = d.y - d.x @ np.array([1.0, 1.0])
    e1 = d.x[:, 0] - 0.5 * d.z[:, 0] - 0.5 * d.z[:, 1]
    e2 = d.x[:, 1] - 0.5 * d.z[:, 2] - 0.5 * d.z[:, 3]
    S = np.cov(np.vstack([e0, e1, e2]))
    assert np.max(np.abs(S - np.array(REL_SIGMA))) <= 0.01
    for j in range(d.m):
        assert abs(np.corrcoef(d.z[:, j], e0)[0, 1]) <= 0.01
    # var(x1) = 0.25 + 0.25 + 0.25, cov(x1, e0) = 0.15
    assert abs(np.corrcoef(d.x[:, 0], e0)[0, 1] - 0.15 / math.sqrt(0.75 * 0.25)) <= 0.02


def test_rng_marginal_moments():
    z = dgp_rel(RelDgpSpec(n=100_000, m=4, seed=2)).z[:, 0]
    assert abs(z.mean()) <= 0.01 and abs(z.var() - 1) <= 0.02


def test_dgp_rel_deterministic():
    a = dgp_rel(RelDgpSpec(n=20, m=5, seed=9))
    b = dgp_rel(RelDgpSpec(n=20, m=5, seed=9))
    assert np.array_equal(a.y, b.y) and np.array_equal(a.z, b.z)


# -- metrics -------------------------------------------------------------------------

def test_rmse_examples():
    sizes = [30, 30, 40]
    assert rmse_alpha([np.array(ALPHA0)] * 3, ALPHA0, sizes) == 0.0
    assert rmse_alpha([[[1.1, 0.0]]], [[1.0, 0.0]], [5]) == pytest.approx(0.1)


@given(seed=st.integers(0, 10_000))
def test_rmse_matches_direct_formula(seed):
    rng = np.random.default_rng(seed)
    sizes = [30, 30, 40]
    alphas = [np.array(ALPHA0) + 0.2 * rng.normal(size=(3, 2)) for _ in range(4)]
    assert rmse_alpha(alphas, ALPHA0, sizes) == pytest.approx(
        oracles.direct_rmse(alphas, ALPHA0, sizes), rel=1e-12)


def test_correct_ratio_examples():
    t = np.array([1, 1, 1, 2, 2, 2, 3, 3, 3, 3])
    assert correct_ratio(t, t) == 1.0
    assert correct_ratio(np.array([3, 1, 2])[t - 1], t) == 1.0
    m = t.copy()
    m[0] = 2
    assert correct_ratio(m, t) == pytest.approx(0.9)


@given(seed=st.integers(0, 10_000))
def test_correct_ratio_matches_direct_and_is_name_invariant(seed):
    rng = np.random.default_rng(seed)
    t = rng.integers(1, 4, 12)
    lab = rng.integers(1, 4, 12)
    perm = rng.permutation(3) + 1
    assert correct_ratio(lab, t) == pytest.approx(oracles.direct_correct_ratio(list(lab), list(t)))
    assert correct_ratio(perm[lab - 1], t) == correct_ratio(lab, t)


def test_bias_rmse_examples():
    assert bias_rmse([[1.0, 1.0]] * 3, (1.0, 1.0)) == (0.0, 0.0)
    b, r = bias_rmse([[1.1, 0], [0.9, 0]], (1.0, 1.0))
    assert b == pytest.approx(0.0, abs=1e-15) and r == pytest.approx(0.1)
    errs = np.random.default_rng(0).normal(size=50)
    b, r = bias_rmse(1 + errs, 1.0)
    assert b == pytest.approx(errs.mean()) and r == pytest.approx(math.sqrt(np.mean(errs ** 2)))


# -- studies -------------------------------------------------------------------------

def tiny_classo(R=2, **kw):
    return StudySpec(estimator="classo", cells=({"n": 15, "T": 5},), R=R, **kw)


def test_study_validation():
    with pytest.raises(StudyError, match="empty study"):
        StudySpec(estimator="classo", cells=({"n": 10, "T": 5},), R=0)
    with pytest.raises(StudyError):
        StudySpec(estimator="classo", cells=({"n": 10, "m": 5},), R=1)
    with pytest.raises(StudyError):
        StudySpec.from_dict({"estimator": "rel", "cells": [{"n": 10, "m": 5}], "R": 1, "bogus": 1})


def test_study_dict_round_trip():
    s = StudySpec.from_dict({"estimator": "rel", "cells": [{"n": 30, "m": 5}], "R": 3,
                             "lambda": 0.2})
    assert s.lam == 0.2
    assert StudySpec.from_dict(s.to_dict()) == s


def test_bundled_study_loads():
    s = load_study("table1_desk")
    assert (s.estimator, s.R, s.cells) == ("classo", 100, ({"n": 100, "T": 15},))


def test_single_replication_summary_equals_record():
    (s,) = run_replications(tiny_classo(R=1, base_seed=7))
    rec = s.records[0]
    assert s.R == 1 and rec["seed"] == 7 and rec["ok"]
    assert s.metrics["correct_ratio"] == rec["correct_ratio"]
    assert s.metrics["rmse"] == math.sqrt(rec["sq_err_post"])
    assert s.metrics["rmse_penalized"] == math.sqrt(rec["sq_err_pen"])


def test_metrics_recomputable_from_records():
    (s,) = run_replications(tiny_classo(R=3))
    again = summarize(s.estimator, s.cell, json.loads(json.dumps(s.records)))
    assert again.metrics == s.metrics
    sizes = CLassoDgpSpec(n=15, T=5).group_sizes()
    direct = oracles.direct_rmse([r["alpha"] for r in s.records], ALPHA0, list(sizes))
    assert s.metrics["rmse_penalized"] == pytest.approx(direct, rel=1e-12)
    for r in s.records:
        assert r["objective_end"] <= r["objective_start"]


def test_workers_do_not_change_output():
    study = tiny_classo(R=3)
    one = run_replications(study, workers=1)
    two = run_replications(study, workers=2)
    assert summary_csv(one) == summary_csv(two)
    assert summary_json(one) == summary_json(two)


def test_rel_study_csv_columns():
    study = StudySpec(estimator="rel", cells=({"n": 30, "m": 4},), R=2)
    out = summary_csv(run_replications(study))
    header, row = out.strip().split("\n")
    assert header == "estimator,n,m,R,failures,bias,rmse"
    assert row.startswith("rel,30,4,2,0,")


def _flaky(panel, config):
    if config.seed % 2 == 0:
        raise RuntimeError("boom")
    return _real_classo(panel, config)


_real_classo = sim.classo_pls


def test_failures_excluded_and_study_aborts(monkeypatch):
    monkeypatch.setattr(sim, "classo_pls", _flaky)
    (s,) = run_replications(tiny_classo(R=4, max_fail_share=0.5))
    assert s.failures == 2 and s.R == 4
    assert all("boom" in r["error"] for r in s.records if not r["ok"])
    good = [r for r in s.records if r["ok"]]
    assert s.metrics["correct_ratio"] == pytest.approx(np.mean([r["correct_ratio"] for r in good]))
    with pytest.raises(StudyAbortError, match="boom") as ei:
        run_replications(tiny_classo(R=4))
    assert len(ei.value.records) == 4
