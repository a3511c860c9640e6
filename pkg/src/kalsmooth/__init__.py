"""Kalman smoothing as structured optimization.

Every smoother reduces to one or more symmetric block-tridiagonal solves
(:mod:`kalsmooth.blocktri`).  On top of that kernel sit the linear
smoother, Gauss-Newton for nonlinear models, interior-point methods for
inequality constraints, l1-Laplace and general PLQ penalties, and sparse
(l1-penalized or LASSO) smoothers.
"""

from .blocktri import BlockDiagonal, BlockTriMatrix, ForwardFactor, solve
from .constrained import IPOptions, smooth_constrained_nonlinear, solve_qp_constrained
from .errors import (
    AllMeasurementsRemoved,
    ConfigError,
    Infeasible,
    InvalidParameter,
    KalsmoothError,
    LineSearchFailed,
    MaxIterReached,
    NotInCatalog,
    NotPositiveDefinite,
    ShapeMismatch,
    SubproblemInfeasible,
    Unbounded,
)
from .linear import NormalSystem, SmootherSolution, assemble, filter_estimates, smooth
from .model import (
    ConstraintSet,
    LinearStateSpace,
    NonlinearStateSpace,
    build_model,
    ship_model,
    smooth_signal_model,
    vanderpol_model,
)
from .nonlinear import GNOptions, smooth_nonlinear
from .plq import PLQPenalty, eval_plq, smooth_plq
from .robust import smooth_l1_laplace
from .sparse import SparsePenaltySpec, project_weighted_l1, sparse_smooth_lasso, sparse_smooth_penalized

__version__ = "0.1.0"
