"""Data selection by covering an application set in partial Wasserstein
divergence.

Exact partial optimal transport (network simplex with duals, warm starts and
ranging), entropic partial OT (log-domain Sinkhorn), greedy and sensitivity
based selectors, baselines and an experiment harness.
"""

__version__ = "0.1.0"

from .core import (CostMatrix, Dataset, DualSolution, MarginalSpec, Role, TransportPlan,
                   build_marginals, default_b_floor, squared_euclidean_cost)
from .errors import (DeadlineExceededError, InfeasibleError, InvalidInputError,
                     InvalidStateError, NonConvergenceError, PWCoverError, SizeCapError)
from .exact import (SimplexState, c_transform, c_transform_all, partial_wasserstein,
                    rhs_ranging, solve_partial_ot)
from .entropic import SinkhornConfig, SinkhornState, grad_b, sinkhorn_partial_ot
from .covering import (ALGORITHMS, CoveringInstance, SelectionTrace, baseline_farthest,
                       baseline_random, empirical_approx_ratio, exact_select, greedy_select,
                       objective_phi, pw_divergence, run_algorithm, sensitivity_ctrans_select,
                       sensitivity_ent_select, sensitivity_lp_select)

__all__ = [
    "ALGORITHMS", "CostMatrix", "CoveringInstance", "Dataset", "DeadlineExceededError",
    "DualSolution", "InfeasibleError", "InvalidInputError", "InvalidStateError", "MarginalSpec",
    "NonConvergenceError", "PWCoverError", "Role", "SelectionTrace", "SimplexState",
    "SinkhornConfig", "SinkhornState", "SizeCapError", "TransportPlan", "baseline_farthest",
    "baseline_random", "build_marginals", "c_transform", "c_transform_all", "default_b_floor",
    "empirical_approx_ratio", "exact_select", "grad_b", "greedy_select", "objective_phi",
    "partial_wasserstein", "pw_divergence", "rhs_ranging", "run_algorithm",
    "sensitivity_ctrans_select", "sensitivity_ent_select", "sensitivity_lp_select",
    "sinkhorn_partial_ot", "solve_partial_ot", "squared_euclidean_cost",
]
