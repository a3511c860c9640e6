"""Inequality-constrained smoothing by a primal-dual interior-point method.

The quadratic program is

    minimize 1/2 x'Cx - c'x   subject to   Bx <= b,

with ``B`` block diagonal in time.  Slacks ``s = b - Bx`` and duals ``u``
satisfy the relaxed complementarity ``u * s = mu``.  Eliminating ``s`` and
``u`` from the Newton system leaves ``(C + B'S^{-1}UB) dx = rhs``, whose
extra term only touches diagonal blocks, so every step is one
block-tridiagonal solve.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import blocktri, linear
from .errors import (
    Infeasible,
    InvalidParameter,
    MaxIterReached,
    ShapeMismatch,
    SubproblemInfeasible,
)
from .blocktri import BlockDiagonal
from .linear import SmootherSolution
from .model import flatten, linearize, propagate
from .nonlinear import GNOptions, LeastSquaresObjective, gauss_newton


@dataclass(frozen=True)
class IPOptions:
    """Interior-point settings.

    ``mu0=None`` starts from the average complementarity ``u's / len``.
    Convergence needs every ``u_i s_i <= comp_tol``, the primal residual
    below ``res_tol * (1 + |c|)`` and the dual residual below
    ``res_tol * (1 + |c| + ||B|'u|)``.
    """

    max_iter: int = 100
    mu0: Optional[float] = None
    comp_tol: float = 1e-10
    res_tol: float = 1e-10
    fraction: float = 0.995

    def __post_init__(self):
        if self.max_iter < 1:
            raise InvalidParameter("max_iter must be positive")
        if self.mu0 is not None and not self.mu0 > 0:
            raise InvalidParameter(f"mu0 must be positive, got {self.mu0}")
        if not (self.comp_tol > 0 and self.res_tol > 0):
            raise InvalidParameter("tolerances must be positive")
        if not 0 < self.fraction < 1:
            raise InvalidParameter(f"fraction must lie in (0, 1), got {self.fraction}")


SHORT_STEP = 0.5


def mu_schedule(mu, iteration, alpha=1.0):
    """Divide ``mu`` by 10 on two of every three iterations.

    ``mu`` is also held after a damped step shorter than ``SHORT_STEP``:
    shrinking it while the primal residual is still large drives slacks to
    zero long before feasibility and ruins the conditioning of the
    eliminated system.
    """
    if iteration % 3 == 2 or alpha < SHORT_STEP:
        return mu
    return mu / 10


def step_to_boundary(v, dv, fraction=0.995):
    """Largest ``alpha <= 1`` keeping ``v + alpha dv`` strictly positive (damped)."""
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, fraction * np.min(-v[neg] / dv[neg])))


class StackedConstraints(BlockDiagonal):
    """Block-diagonal ``B`` (blocks ``(l_k, n)``) together with the bound ``b``."""

    def __init__(self, B, b, n):
        if len(B) != len(b):
            raise ShapeMismatch(f"got {len(B)} constraint blocks but {len(b)} bounds")
        b_blocks = [np.atleast_1d(np.asarray(bk, dtype=float)) for bk in b]
        super().__init__([np.asarray(Bk, dtype=float).reshape(len(bk), n) for Bk, bk in zip(B, b_blocks)], n)
        self.b = flatten(b_blocks)

    @classmethod
    def from_constraint_set(cls, cs, n):
        if not cs.affine:
            raise InvalidParameter("expected an affine constraint set")
        return cls(cs.B, cs.b, n)


def _as_stacked(B, b, n):
    if isinstance(B, StackedConstraints):
        return B
    return StackedConstraints(B, b, n)


@dataclass
class IPState:
    x: np.ndarray
    u: np.ndarray
    s: np.ndarray
    mu: float
    iteration: int = 0


def kkt_residuals(state, sys, con):
    """Residuals of the relaxed KKT system.

    Returns ``(primal, comp, dual)`` with ``primal = s + Bx - b``,
    ``comp = u*s - mu`` and ``dual = Cx - c + B'u``.
    """
    primal = state.s + con.apply(state.x) - con.b
    comp = state.u * state.s - state.mu
    dual = sys.gradient(state.x) + con.apply_t(state.u)
    return primal, comp, dual


def newton_direction(state, sys, con):
    """Newton step on the relaxed KKT system via the eliminated x-system.

    Returns ``(dx, du, ds, H)`` where ``H = C + B'S^{-1}UB`` is the
    block-tridiagonal matrix that was factored.
    """
    r1, r2, r3 = kkt_residuals(state, sys, con)
    s, u = state.s, state.u
    H = sys.C.add_diagonal_blocks(con.gram_blocks(u / s))
    rhs = -r3 - con.apply_t((u * r1 - r2) / s)
    dx = blocktri.solve(H, rhs)[0]
    ds = -r1 - con.apply(dx)
    du = (-r2 - u * ds) / s
    return dx, du, ds, H


def ip_step(state, sys, B, b=None, opts=IPOptions()):
    """One damped Newton step followed by the ``mu`` update."""
    con = _as_stacked(B, b, sys.c.shape[1])
    dx, du, ds, _ = newton_direction(state, sys, con)
    alpha = min(step_to_boundary(state.s, ds, opts.fraction), step_to_boundary(state.u, du, opts.fraction))
    return IPState(
        x=state.x + alpha * dx,
        u=state.u + alpha * du,
        s=state.s + alpha * ds,
        mu=mu_schedule(state.mu, state.iteration, alpha),
        iteration=state.iteration + 1,
    )


def initial_state(sys, con, mu0=None):
    x = blocktri.solve(sys.C, sys.c)[0]
    s = np.maximum(con.b - con.apply(x), 1.0)
    u = np.ones(con.size)
    mu = float(np.mean(u * s)) if mu0 is None else mu0
    return IPState(x=x, u=u, s=s, mu=mu)


def solve_qp_constrained(sys, B, b=None, opts=IPOptions()):
    """Minimize ``1/2 x'Cx - c'x`` subject to ``Bx <= b``.

    Parameters
    ----------
    sys : NormalSystem
    B : list of (l_k, n) arrays, or StackedConstraints
    b : list of length-l_k arrays (ignored when ``B`` is already stacked)

    Returns
    -------
    (SmootherSolution, dict)
        The dict holds the duals ``u`` and slacks ``s`` as flat vectors.
    """
    n = sys.c.shape[1]
    con = _as_stacked(B, b, n)
    if con.N != sys.C.N:
        raise ShapeMismatch(f"constraints cover {con.N} steps, system has {sys.C.N}")
    if con.size == 0:
        sol = linear.smooth_system(sys)
        return sol, {"u": np.zeros(0), "s": np.zeros(0)}
    state = initial_state(sys, con, opts.mu0)
    scale = 1.0 + float(np.linalg.norm(sys.c))
    abs_con = BlockDiagonal([np.abs(Bk) for Bk in con.blocks], n)
    trace = []
    for _ in range(opts.max_iter):
        r1, _, r3 = kkt_residuals(state, sys, con)
        comp = state.u * state.s
        trace.append({
            "mu": state.mu,
            "primal": float(np.linalg.norm(r1)),
            "dual": float(np.linalg.norm(r3)),
            "max_comp": float(np.max(comp)),
        })
        # nearly parallel rows carry huge, mostly cancelling multipliers; roundoff
        # in B'u scales with |B|'|u|, not with the cancelled sum
        dual_scale = scale + float(np.linalg.norm(abs_con.apply_t(state.u)))
        if (np.max(comp) <= opts.comp_tol and trace[-1]["primal"] <= opts.res_tol * scale
                and trace[-1]["dual"] <= opts.res_tol * dual_scale):
            break
        state = ip_step(state, sys, con, opts=opts)
        # no point pushing the barrier far below the complementarity target
        state.mu = max(state.mu, 0.1 * opts.comp_tol)
    else:
        r1, _, r3 = kkt_residuals(state, sys, con)
        resid = float(max(np.linalg.norm(r1), np.linalg.norm(r3), np.max(state.u * state.s)))
        if np.max(state.u) > 1e8 and np.linalg.norm(r1) > 1e-6 * scale:
            raise Infeasible(f"constraints appear infeasible (max dual {np.max(state.u):.3e})")
        raise MaxIterReached(f"interior point stopped after {opts.max_iter} iterations, KKT residual {resid:.3e}",
                             residual=resid)
    sol = SmootherSolution(
        x=state.x,
        objective=sys.objective(state.x),
        residual_norm=trace[-1]["dual"],
        iterations=len(trace) - 1,
        trace=trace,
        info={"u": state.u, "s": state.s, "max_violation": float(np.max(con.apply(state.x) - con.b))},
    )
    return sol, {"u": state.u, "s": state.s}


# -- nonlinear models and constraints ---------------------------------------


class PenaltyMerit:
    """``f(x) + pi * sum(max(xi(x) - b, 0))`` for the constrained line search."""

    def __init__(self, model, constraints, penalty=1.0):
        self.f = LeastSquaresObjective(model)
        self.constraints = constraints
        self.penalty = penalty

    def violation(self, x):
        vals, _ = self.constraints.evaluate(x)
        return float(sum(np.sum(np.maximum(v - bk, 0.0)) for v, bk in zip(vals, self.constraints.b)))

    def __call__(self, x):
        return self.f(x) + self.penalty * self.violation(x)


def smooth_constrained_nonlinear(model, constraints, x_init=None, opts=GNOptions(), ip_opts=IPOptions()):
    """Gauss-Newton with constrained subproblems ``xi(x) + J d <= b``.

    Each direction solves the linearized smoothing problem under the
    linearized constraints.  Steps are accepted on an exact-penalty merit
    whose weight is kept above the largest subproblem dual, which makes
    the merit's model decrease nonpositive even from infeasible points.

    Returns ``(SmootherSolution, GNTrace)``.
    """
    x_init = propagate(model) if x_init is None else np.asarray(x_init, dtype=float)
    merit = PenaltyMerit(model, constraints)
    ip_iters = []

    def direction(x, fx):
        lin = linearize(model, x)
        sys = linear.assemble(lin)
        vals, jacs = constraints.evaluate(x)
        bd = [bk - v for v, bk in zip(vals, constraints.b)]
        try:
            qp, duals = solve_qp_constrained(sys, jacs, bd, ip_opts)
        except Infeasible as exc:
            raise SubproblemInfeasible(f"linearized constraints infeasible: {exc}") from exc
        ip_iters.append(qp.iterations)
        d = qp.x
        umax = float(np.max(duals["u"], initial=0.0))
        refresh = False
        if merit.penalty < 1.5 * umax:
            merit.penalty = 2.0 * umax
            refresh = True
        # model of the merit at d: f~(d) (linearized constraints hold)
        decrease = (sys.objective(d) - sys.offset) - merit.penalty * merit.violation(x)
        extra = {"ip_iterations": qp.iterations, "penalty": merit.penalty, "refresh_objective": refresh}
        return d, min(decrease, 0.0), extra

    x, fx, status, trace = gauss_newton(merit, direction, x_init, opts, affine=model.affine and constraints.affine)
    viol = constraints.max_violation(x)
    sol = SmootherSolution(
        x=x,
        objective=merit.f(x),
        residual_norm=abs(trace.final_model_decrease) if np.isfinite(trace.final_model_decrease) else np.nan,
        iterations=len(trace),
        status=status,
        trace=trace.steps,
        info={"max_violation": viol, "ip_iterations": ip_iters, "penalty": merit.penalty},
    )
    return sol, trace
