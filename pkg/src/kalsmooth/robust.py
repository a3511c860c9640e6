"""Outlier-robust smoothing with an l1-Laplace measurement model.

The MAP objective is

    1/2 |g(x) - w|^2_{Q^-1} + sqrt(2) |R^{-1/2}(h(x) - z)|_1 .

Each Gauss-Newton subproblem is the quadratic program

    minimize   1/2 d'Cd + c'd + sqrt(2) 1'(p+ + p-)
    subject to Bd + b = p+ - p-,  p+, p- >= 0,

with ``C = G'Q^{-1}G``, ``c = -G'Q^{-1}w``, ``B = R^{-1/2}H`` and
``b = -R^{-1/2}z``.  Note the ``+c'd`` convention here, unlike the
``-c'x`` used by the Gaussian smoother.
"""

from dataclasses import dataclass

import numpy as np

from . import blocktri
from .blocktri import BlockDiagonal, BlockTriMatrix
from .constrained import IPOptions, mu_schedule, step_to_boundary
from .errors import MaxIterReached, ShapeMismatch
from .linear import SmootherSolution, apply_Gt, gram, inverse_blocks
from .model import (
    LinearStateSpace,
    Whitener,
    cholesky_blocks,
    eval_stacked,
    flatten,
    inv_sqrt_blocks,
    linearize,
    propagate,
)
from .nonlinear import GNOptions, gauss_newton

SQRT2 = np.sqrt(2.0)


@dataclass(frozen=True)
class L1QP:
    C: BlockTriMatrix
    c: np.ndarray
    B: BlockDiagonal
    b: np.ndarray
    offset: float = 0.0

    def objective(self, d):
        """``1/2 d'Cd + c'd + offset + sqrt(2)|Bd + b|_1``."""
        quad = 0.5 * float(np.sum(d * blocktri.multiply(self.C, d))) + float(np.sum(self.c * d))
        return quad + self.offset + SQRT2 * float(np.sum(np.abs(self.B.apply(d) + self.b)))


def l1_qp(model):
    """Subproblem data for a linear model (or a linearization).

    ``offset`` is ``1/2 w'Q^{-1}w`` so that ``objective(d)`` equals the
    robust objective of ``model`` at ``d``.
    """
    Qinv = np.stack(inverse_blocks(cholesky_blocks(model.Q, "process covariance Q")))
    Rh = inv_sqrt_blocks(model.R, "measurement covariance R")
    Qw = np.einsum("kij,kj->ki", Qinv, model.w)
    B = BlockDiagonal([S @ Hk for S, Hk in zip(Rh, model.H)], model.n)
    b = -flatten([S @ zk for S, zk in zip(Rh, model.z)])
    return L1QP(C=gram(model.G, Qinv), c=-apply_Gt(model.G, Qw), B=B, b=b,
                offset=0.5 * float(np.sum(model.w * Qw)))


@dataclass
class L1IPState:
    d: np.ndarray
    p_plus: np.ndarray
    p_minus: np.ndarray
    s_plus: np.ndarray
    s_minus: np.ndarray
    mu: float
    iteration: int = 0


def l1_residuals(state, qp, mu=None):
    """The five blocks of ``F_mu`` (``mu=0`` gives the KKT residual)."""
    mu = state.mu if mu is None else mu
    F1 = state.p_plus - state.p_minus - qp.b - qp.B.apply(state.d)
    F2 = state.p_minus * state.s_minus - mu
    F3 = state.s_plus + state.s_minus - 2 * SQRT2
    F4 = state.p_plus * state.s_plus - mu
    F5 = blocktri.multiply(qp.C, state.d) + qp.c + qp.B.apply_t(state.s_minus - state.s_plus) / 2
    return F1, F2, F3, F4, F5


def l1_newton_direction(state, qp):
    """Newton step on ``F_mu`` reduced to ``(C + B'T^{-1}B) dd = rhs``.

    Returns ``(dd, dp_plus, dp_minus, ds_plus, ds_minus)``.
    """
    F1, F2, F3, F4, F5 = l1_residuals(state, qp)
    pp, pm, sp, sm = state.p_plus, state.p_minus, state.s_plus, state.s_minus
    T = pp / sp + pm / sm
    g = -F1 + (F4 - pp * F3) / sp - F2 / sm
    H = qp.C.add_diagonal_blocks(qp.B.gram_blocks(1.0 / T))
    rhs = -F5 - qp.B.apply_t(F3 / 2 + g / T)
    dd = blocktri.solve(H, rhs)[0]
    dsm = (qp.B.apply(dd) + g) / T
    dsp = -F3 - dsm
    dpp = (-F4 - pp * dsp) / sp
    dpm = (-F2 - pm * dsm) / sm
    return dd, dpp, dpm, dsp, dsm


def solve_l1_qp(qp, opts=IPOptions(), return_state=False):
    """Interior-point solve of the l1 subproblem; returns the minimizing ``d``.

    Starts from ``d = 0`` with ``p+ - p- = b`` (each at least 1) and
    ``s+ = s- = sqrt(2)``, so the first and third residual blocks vanish.
    """
    N, n = qp.c.shape
    if qp.B.N != N:
        raise ShapeMismatch(f"measurement operator covers {qp.B.N} steps, system has {N}")
    if qp.B.size == 0:
        d = blocktri.solve(qp.C, -qp.c)[0]
        return (d, None) if return_state else d
    r = qp.b.copy()
    state = L1IPState(
        d=np.zeros((N, n)),
        p_plus=np.maximum(r, 0) + 1,
        p_minus=np.maximum(-r, 0) + 1,
        s_plus=np.full(r.size, SQRT2),
        s_minus=np.full(r.size, SQRT2),
        mu=0.0,
    )
    state.mu = float(np.mean(np.concatenate([state.p_plus * state.s_plus, state.p_minus * state.s_minus])))
    scale = 1.0 + float(np.linalg.norm(qp.c)) + float(np.linalg.norm(qp.b))
    for _ in range(opts.max_iter):
        F = l1_residuals(state, qp, mu=0.0)
        resid = max(float(np.max(np.abs(f))) for f in F)
        if resid <= opts.res_tol * scale and max(np.max(F[1]), np.max(F[3])) <= opts.comp_tol:
            break
        dd, dpp, dpm, dsp, dsm = l1_newton_direction(state, qp)
        alpha = min(
            step_to_boundary(state.p_plus, dpp, opts.fraction),
            step_to_boundary(state.p_minus, dpm, opts.fraction),
            step_to_boundary(state.s_plus, dsp, opts.fraction),
            step_to_boundary(state.s_minus, dsm, opts.fraction),
        )
        state = L1IPState(
            d=state.d + alpha * dd,
            p_plus=state.p_plus + alpha * dpp,
            p_minus=state.p_minus + alpha * dpm,
            s_plus=state.s_plus + alpha * dsp,
            s_minus=state.s_minus + alpha * dsm,
            mu=mu_schedule(state.mu, state.iteration, alpha),
            iteration=state.iteration + 1,
        )
    else:
        raise MaxIterReached(f"l1 interior point stopped after {opts.max_iter} iterations, KKT residual {resid:.3e}",
                             residual=resid)
    return (state.d, state) if return_state else state.d


class L1Objective:
    """``1/2 |g(x) - w|^2_{Q^-1} + sqrt(2) |R^{-1/2}(h(x) - z)|_1``."""

    def __init__(self, model):
        self.model = model
        self.Qw = Whitener(model.Q, "process covariance Q")
        self.Rh = Whitener(model.R, "measurement covariance R", symmetric=True)
        self.z = flatten(model.z)

    def __call__(self, x):
        gx, hx = eval_stacked(self.model, x)
        proc = self.Qw.half_norm2((gx - self.model.w).ravel())
        meas = float(np.sum(np.abs(self.Rh.apply(flatten(hx) - self.z))))
        return proc + SQRT2 * meas


def l1_objective(model, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (model.N, model.n):
        raise ShapeMismatch(f"trajectory must be {(model.N, model.n)}, got {x.shape}")
    if isinstance(model, LinearStateSpace):
        model = model.as_nonlinear()
    return L1Objective(model)(x)


def smooth_l1_laplace(model, x_init=None, opts=GNOptions(), ip_opts=IPOptions()):
    """Gauss-Newton on the l1-Laplace objective.

    Each direction solves the subproblem QP on the linearization; the
    Armijo search runs on the true nonsmooth objective.  Affine models
    finish in one outer iteration.  Returns ``(SmootherSolution, GNTrace)``.
    """
    if isinstance(model, LinearStateSpace):
        model = model.as_nonlinear()
    f = L1Objective(model)
    x_init = propagate(model) if x_init is None else np.asarray(x_init, dtype=float)

    def direction(x, fx):
        qp = l1_qp(linearize(model, x))
        d = solve_l1_qp(qp, ip_opts)
        # qp.objective(0) equals f(x) up to roundoff
        return d, min(qp.objective(d) - qp.objective(np.zeros_like(d)), 0.0), {}

    x, fx, status, trace = gauss_newton(f, direction, x_init, opts, affine=model.affine)
    sol = SmootherSolution(
        x=x,
        objective=fx,
        residual_norm=abs(trace.final_model_decrease) if np.isfinite(trace.final_model_decrease) else np.nan,
        iterations=len(trace),
        status=status,
        trace=trace.steps,
    )
    return sol, trace
