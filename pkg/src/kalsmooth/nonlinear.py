"""Gauss-Newton smoothing for convex-composite objectives ``rho(F(x))``.

The driver :func:`gauss_newton` is shared by the least-squares, l1-Laplace
and constrained smoothers; each supplies its own objective and a direction
oracle returning ``(d, model_decrease)`` where
``model_decrease = rho(F(x) + F'(x) d) - rho(F(x)) <= 0``.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import linear
from .errors import InvalidParameter, KalsmoothError, LineSearchFailed
from .linear import SmootherSolution
from .model import LinearStateSpace, Whitener, eval_stacked, flatten, linearize, propagate


@dataclass(frozen=True)
class GNOptions:
    """Gauss-Newton settings.

    ``lam`` is the backtracking factor and ``kappa`` the sufficient-decrease
    constant of the Armijo test.  ``tol=None`` means ``1e-8 * (1 + f(x_init))``.
    """

    max_iter: int = 100
    lam: float = 0.5
    kappa: float = 1e-3
    tol: Optional[float] = None
    max_backtracks: int = 52
    keep_iterates: bool = False

    def __post_init__(self):
        if not 0 < self.lam < 1:
            raise InvalidParameter(f"lam must lie in (0, 1), got {self.lam}")
        if not 0 < self.kappa < 1:
            raise InvalidParameter(f"kappa must lie in (0, 1), got {self.kappa}")
        if self.max_iter < 1 or self.max_backtracks < 0:
            raise InvalidParameter("max_iter must be >= 1 and max_backtracks >= 0")


@dataclass
class GNStep:
    objective: float
    model_decrease: float
    step: float
    backtracks: int
    x: Optional[np.ndarray] = None
    d: Optional[np.ndarray] = None
    extra: dict = field(default_factory=dict)


@dataclass
class GNTrace:
    steps: list = field(default_factory=list)
    final_objective: float = np.nan
    final_model_decrease: float = np.nan

    @property
    def objectives(self):
        return [s.objective for s in self.steps] + [self.final_objective]

    def __len__(self):
        return len(self.steps)


def armijo_search(f, x, d, model_decrease, opts=GNOptions(), fx=None):
    """Backtrack ``gamma = lam**s`` until
    ``f(x + gamma d) <= f(x) + kappa * gamma * model_decrease``.

    Returns ``(gamma, s, f(x + gamma d))``.
    """
    if not model_decrease < 0:
        raise InvalidParameter(f"model decrease must be negative, got {model_decrease}")
    fx = f(x) if fx is None else fx
    gamma = 1.0
    for s in range(opts.max_backtracks + 1):
        f_new = f(x + gamma * d)
        if f_new <= fx + opts.kappa * gamma * model_decrease:
            return gamma, s, f_new
        gamma *= opts.lam
    raise LineSearchFailed(
        f"no sufficient decrease after {opts.max_backtracks} backtracks "
        f"(model decrease {model_decrease:.3e}); check model Jacobians"
    )


def gauss_newton(f, direction, x_init, opts=GNOptions(), affine=False):
    """Generic damped Gauss-Newton loop.

    Stops when ``|model_decrease| <= tol`` or after ``max_iter`` steps.  For
    affine inner maps the subproblem is the problem itself, so a single full
    step finishes the job.

    ``direction(x, fx)`` returns ``(d, model_decrease, extra)``; setting
    ``extra["refresh_objective"]`` tells the loop that ``f`` itself changed.
    """
    x = np.array(x_init, dtype=float)
    fx = f(x)
    tol = opts.tol if opts.tol is not None else 1e-8 * (1.0 + abs(fx))
    trace = GNTrace()
    status = "max_iter"
    for _ in range(opts.max_iter):
        d, decrease, extra = direction(x, fx)
        if extra.pop("refresh_objective", False):
            # the oracle changed f (e.g. a merit weight); re-evaluate
            fx = f(x)
        if abs(decrease) <= tol:
            status = "converged"
            trace.final_model_decrease = decrease
            break
        if decrease > 0:
            raise KalsmoothError(f"direction oracle reported model increase {decrease:.3e}")
        try:
            gamma, s, f_new = armijo_search(f, x, d, decrease, opts, fx)
        except LineSearchFailed:
            # roundoff floor: treat as stationary rather than failing
            if abs(decrease) <= 1e-6 * (1.0 + abs(fx)):
                status = "converged"
                trace.final_model_decrease = decrease
                break
            raise
        trace.steps.append(GNStep(
            objective=fx,
            model_decrease=decrease,
            step=gamma,
            backtracks=s,
            x=x.copy() if opts.keep_iterates else None,
            d=d.copy() if opts.keep_iterates else None,
            extra=extra,
        ))
        x = x + gamma * d
        fx = f_new
        if affine and s == 0:
            status = "converged"
            trace.final_model_decrease = 0.0
            break
    trace.final_objective = fx
    return x, fx, status, trace


# -- nonlinear least squares ------------------------------------------------


class LeastSquaresObjective:
    """``1/2 |g(x) - w|^2_{Q^-1} + 1/2 |h(x) - z|^2_{R^-1}`` with cached factors."""

    def __init__(self, model):
        self.model = model
        self.Qw = Whitener(model.Q, "process covariance Q")
        self.Rw = Whitener(model.R, "measurement covariance R")
        self.z = flatten(model.z)

    def process_term(self, gx):
        return self.Qw.half_norm2((gx - self.model.w).ravel())

    def measurement_residuals(self, hx):
        """Whitened stacked residual ``R^{-1/2}(h(x) - z)``."""
        return self.Rw.apply(flatten(hx) - self.z)

    def __call__(self, x):
        gx, hx = eval_stacked(self.model, x)
        r = self.measurement_residuals(hx)
        return self.process_term(gx) + 0.5 * float(r @ r)


def objective(model, x):
    return LeastSquaresObjective(model)(x)


def gn_direction(model, x, fx=None):
    """Gauss-Newton step: minimizer of the linearized least-squares problem.

    Returns ``(d, model_decrease)`` with ``model_decrease = f~(d) - f(x)``.
    """
    lin = linearize(model, x)
    sys = linear.assemble(lin)
    d = linear.blocktri.solve(sys.C, sys.c)[0]
    # f~(0) = f(x) = offset, so f~(d) - f(x) = 1/2 d'Cd - c'd
    decrease = sys.objective(d) - sys.offset
    return d, min(decrease, 0.0)


def smooth_nonlinear(model, x_init=None, opts=GNOptions()):
    """Gauss-Newton smoother for nonlinear process/measurement models.

    ``x_init`` defaults to the noise-free propagation of the prior mean.
    Returns ``(SmootherSolution, GNTrace)``.
    """
    if isinstance(model, LinearStateSpace):
        model = model.as_nonlinear()
    f = LeastSquaresObjective(model)
    x_init = propagate(model) if x_init is None else x_init

    def direction(x, fx):
        d, dec = gn_direction(model, x)
        return d, dec, {}

    x, fx, status, trace = gauss_newton(f, direction, x_init, opts, affine=model.affine)
    lin = linearize(model, x)
    grad = linear.assemble(lin).c  # = -grad f(x)
    sol = SmootherSolution(
        x=x, objective=fx, residual_norm=float(np.linalg.norm(grad)),
        iterations=len(trace), status=status, trace=trace.steps,
    )
    return sol, trace
