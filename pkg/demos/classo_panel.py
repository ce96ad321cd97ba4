"""One C-Lasso fit on a simulated three-group panel, then a short
replication study like the desk-scale table row.

Run: python3 demos/classo_panel.py [R]
"""

import sys

import numpy as np

from conicon import CLassoConfig, classo_pls, within_demean
from conicon.simulation import (CLassoDgpSpec, StudySpec, correct_ratio, default_lambda_classo,
                                dgp_classo, run_replications, summary_csv)

raw, truth = dgp_classo(CLassoDgpSpec(n=100, T=15, seed=1))
panel = within_demean(raw)
lam = default_lambda_classo(panel)
res = classo_pls(panel, CLassoConfig(K=3, lam=lam))
print(f"lambda = {lam:.4f}, outer iterations {res.iterations}")
print("group centers (penalized):\n", np.round(res.alpha, 3))
print("group centers (post refit):\n", np.round(res.alpha_post, 3))
print("correct ratio:", correct_ratio(res.groups, truth))
print("objective first/last:", round(res.objective_trace[0], 6), round(res.objective_trace[-1], 6))

R = int(sys.argv[1]) if len(sys.argv) > 1 else 5
study = StudySpec.from_dict({"name": "demo", "estimator": "classo", "cells": [{"n": 100, "T": 15}],
                             "R": R, "base_seed": 1, "K": 3, "lambda": None})
print(summary_csv(run_replications(study)))
