"""Conic formulations and an interior-point solver for penalized panel
regression (C-Lasso) and relaxed empirical likelihood."""

from .classo import (CLassoConfig, CLassoError, CLassoResult, EmptyGroupError, classify,
                     classo_pls, full_objective, information_criterion, post_lasso)
from .formulations import (DesignData, MomentMatrix, SubstepInput, classo_substep_conic,
                           dantzig_lp, decode_lasso, decode_poisson, decode_substep,
                           lasso_conic, moment_matrix, pgmm_transform, poisson_lasso_conic,
                           rel_inner_conic)
from .panel import PanelData, PanelError, read_panel_csv, within_demean, write_panel_csv
from .problem import ConicProblem, QuadCone, SeparableTerm, validate
from .rel import IVData, RELConfig, RELInfeasibleError, RELResult, rel_estimate, rel_inner
from .solver import Solution, SolverOptions, Status, kkt_residuals, solve

__version__ = "0.1.0"
