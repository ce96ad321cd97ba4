"""Small conic programs solved with the interior-point solver.

Run: python3 demos/solver_basics.py
"""

import numpy as np

from conicon import ConicProblem, QuadCone, SeparableTerm, solve
from conicon.formulations import DesignData, decode_lasso, lasso_conic

# distance from the origin to (3, 4): min r s.t. ||v|| <= r, v fixed
pyth = ConicProblem(c=[1.0, 0.0, 0.0], A=[[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
                    blc=[3.0, 4.0], buc=[3.0, 4.0], cones=[QuadCone([0, 1, 2])])
sol = solve(pyth)
print("second-order cone:", sol.status.value, "objective", round(sol.objective, 8))

# a tiny LP: max x + 2y on the unit box with x + y <= 1.5
lp = ConicProblem(sense="max", c=[1.0, 2.0], A=[[1.0, 1.0]], blc=[-np.inf], buc=[1.5],
                  blx=[0.0, 0.0], bux=[1.0, 1.0])
sol = solve(lp)
print("LP:", sol.status.value, "x =", np.round(sol.x, 6), "objective", round(sol.objective, 8))

# max sum log pi on the simplex: uniform weights
n = 5
simplex = ConicProblem(sense="max", c=np.zeros(n), A=np.ones((1, n)), blc=[1.0], buc=[1.0],
                       blx=np.zeros(n), bux=np.ones(n),
                       separable=[SeparableTerm("LOG", i, 1.0, 1.0, 0.0) for i in range(n)])
print("log simplex:", np.round(solve(simplex).x, 8))

# Lasso with an orthonormal design is soft thresholding of X'y
rng = np.random.default_rng(0)
X, _ = np.linalg.qr(rng.normal(size=(30, 4)))
y = rng.normal(size=30) * 2
lam = 0.05
beta = decode_lasso(solve(lasso_conic(DesignData(X, y), lam)).x, 4)
v = X.T @ y
k = 30 * lam / 2
soft = np.sign(v) * np.maximum(np.abs(v) - k, 0)
print("lasso:         ", np.round(beta, 6))
print("soft threshold:", np.round(soft, 6))
# the epigraph t >= ||y - X b||^2 makes b converge like sqrt(gap); expect
# agreement to roughly 1e-6, not to the solver tolerance
print(f"max difference {np.max(np.abs(beta - soft)):.1e}")
