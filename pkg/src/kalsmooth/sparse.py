"""Sparsity-promoting smoothers.

Penalized form, solved by a primal-dual interior-point method::

    minimize 1/2 x'Cx - c'x + lam |Wx|_1

Constrained (LASSO) form, solved by spectral projected gradient::

    minimize 1/2 x'Cx - c'x   subject to   |Wx|_1 <= tau

``W`` is a nonnegative diagonal weight given as an array shaped like the
trajectory ``(N, n)`` (or ``(n,)``, repeated over time).  Zero weights
exempt components from the penalty.
"""

from collections import deque
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import blocktri
from .constrained import IPOptions, mu_schedule, step_to_boundary
from .errors import InvalidParameter, MaxIterReached, ShapeMismatch
from .blocktri import BlockTriMatrix
from .linear import SmootherSolution


@dataclass(frozen=True)
class SparsePenaltySpec:
    """Weights plus either ``lam`` (penalized form) or ``tau`` (LASSO form)."""

    W: np.ndarray
    lam: Optional[float] = None
    tau: Optional[float] = None

    def __post_init__(self):
        W = np.asarray(self.W, dtype=float)
        if np.any(W < 0) or not np.all(np.isfinite(W)):
            raise InvalidParameter("weights must be finite and nonnegative")
        object.__setattr__(self, "W", W)
        if self.lam is not None and not self.lam > 0:
            raise InvalidParameter(f"lam must be positive, got {self.lam}")
        if self.tau is not None and not self.tau >= 0:
            raise InvalidParameter(f"tau must be nonnegative, got {self.tau}")

    def weights(self, shape):
        try:
            return np.broadcast_to(self.W, shape).astype(float)
        except ValueError:
            raise ShapeMismatch(f"weights of shape {self.W.shape} do not fit trajectory {shape}") from None


def soft_threshold(v, t):
    return np.sign(v) * np.maximum(np.abs(v) - t, 0.0)


def soft_residual(sys, x, lam, W):
    """``|x - soft(x - grad, lam W)|_inf``, zero exactly at a minimizer."""
    return float(np.max(np.abs(x - soft_threshold(x - sys.gradient(x), lam * W))))


def penalized_objective(sys, x, lam, W):
    return sys.objective(x) + lam * float(np.sum(W * np.abs(x)))


def sparse_smooth_penalized(sys, spec, opts=IPOptions(), soft_tol=1e-6):
    """Interior-point solve of the l1-penalized smoothing problem.

    Auxiliary ``y >= |Wx|`` turns the penalty into ``lam 1'y``; slacks
    ``s = y - Wx``, ``r = y + Wx`` carry multipliers ``q``, ``p``.  With
    ``Phi = q/s + p/r`` and ``Psi = q/s - p/r`` the Newton step reduces to

        (C + W (Phi^2 - Psi^2) Phi^{-1} W) dx = rhs,

    and ``Phi^2 - Psi^2 = 4 q p / (s r)`` is diagonal, so the matrix keeps
    the block-tridiagonal pattern of ``C``.  The final iterate is refined by
    :func:`polish` when that lowers the soft-threshold residual.
    """
    if spec.lam is None:
        raise InvalidParameter("penalized form needs lam")
    lam = spec.lam
    W = spec.weights(sys.c.shape)
    x = blocktri.solve(sys.C, sys.c)[0]
    y = np.abs(W * x) + 1.0
    s, r = y - W * x, y + W * x
    q = np.full_like(x, lam / 2)
    p = np.full_like(x, lam / 2)
    mu = float(np.mean(np.concatenate([(s * q).ravel(), (r * p).ravel()])))
    scale = 1.0 + float(np.linalg.norm(sys.c)) + lam
    trace = []
    for it in range(opts.max_iter):
        f1 = s - y + W * x
        f2 = r - y - W * x
        f5 = lam - q - p
        f6 = W * (q - p) + sys.gradient(x)
        kkt = max(float(np.max(np.abs(v))) for v in (f1, f2, f5, f6))
        comp = max(float(np.max(s * q)), float(np.max(r * p)))
        trace.append({"mu": mu, "kkt": kkt, "max_comp": comp})
        if kkt <= opts.res_tol * scale and comp <= opts.comp_tol:
            break
        f3 = s * q - mu
        f4 = r * p - mu
        D1, D2 = q / s, p / r
        Phi, Psi = D1 + D2, D1 - D2
        diff = 4 * q * p / (s * r)
        # identity check, measured against Phi^2 since the difference cancels
        trace[-1]["phi_psi_identity"] = float(np.max(np.abs((Phi**2 - Psi**2) - diff) / Phi**2))
        g1 = (-f3 + q * f1) / s
        g2 = (-f4 + p * f2) / r
        h = g1 + g2 - f5
        rhs = -f6 - W * (g1 - g2 - Psi * h / Phi)
        extra = W * W * diff / Phi
        blocks = np.einsum("ki,ij->kij", extra, np.eye(x.shape[1]))
        dx = blocktri.solve(sys.C.add_diagonal_blocks(blocks), rhs)[0]
        dy = (h + Psi * W * dx) / Phi
        ds = -f1 + dy - W * dx
        dr = -f2 + dy + W * dx
        dq = (-f3 - q * ds) / s
        dp = (-f4 - p * dr) / r
        alpha = min(step_to_boundary(v.ravel(), dv.ravel(), opts.fraction)
                    for v, dv in ((s, ds), (r, dr), (q, dq), (p, dp)))
        x, y, s, r = x + alpha * dx, y + alpha * dy, s + alpha * ds, r + alpha * dr
        q, p = q + alpha * dq, p + alpha * dp
        mu = mu_schedule(mu, it, alpha)
    else:
        raise MaxIterReached(f"sparse interior point stopped after {opts.max_iter} iterations, "
                             f"KKT residual {trace[-1]['kkt']:.3e}", residual=trace[-1]["kkt"])
    polished = polish(sys, x, lam, W)
    if polished is not None:
        x = polished
    soft = soft_residual(sys, x, lam, W)
    return SmootherSolution(
        x=x,
        objective=penalized_objective(sys, x, lam, W),
        residual_norm=soft,
        iterations=len(trace) - 1,
        status="converged" if soft <= soft_tol * scale else "inaccurate",
        trace=trace,
        info={"q": q, "p": p, "kkt": trace[-1]["kkt"], "polished": polished is not None},
    )


def polish(sys, x, lam, W, zero_tol=1e-7):
    """Exact solve on the support and signs read off an interior-point iterate.

    Components with ``|x_i| <= zero_tol (1 + |x|_inf)`` and ``W_i > 0`` are
    fixed at zero; the rest solve ``C_FF x_F = c_F - lam W_F sign(x_F)``.
    Fixed rows and columns are replaced by the identity so the matrix keeps
    its block-tridiagonal shape.  Returns ``None`` when the signs change or
    the soft-threshold residual does not improve.
    """
    free = (W == 0) | (np.abs(x) > zero_tol * (1.0 + float(np.max(np.abs(x)))))
    if np.all(free) and np.all(W == 0):
        return None
    keep = free.astype(float)
    sign = np.sign(x) * keep
    diag = sys.C.diag * keep[:, :, None] * keep[:, None, :] + np.einsum("ki,ij->kij", 1.0 - keep, np.eye(x.shape[1]))
    sub = sys.C.sub * keep[1:, :, None] * keep[:-1, None, :]
    rhs = (sys.c - lam * W * sign) * keep
    x_new = blocktri.solve(BlockTriMatrix(diag, sub), rhs)[0]
    signed = free & (W > 0)
    if np.any(np.sign(x_new[signed]) != sign[signed]):
        return None
    if soft_residual(sys, x_new, lam, W) >= soft_residual(sys, x, lam, W):
        return None
    return x_new


def project_weighted_l1(v, W, tau):
    """Euclidean projection onto ``{x : sum W_i |x_i| <= tau}``.

    The solution soft-thresholds by ``theta W_i``; ``theta`` is found by
    sorting the breakpoints ``|v_i| / W_i``.  Components with ``W_i = 0``
    are unconstrained and returned unchanged.
    """
    v = np.asarray(v, dtype=float)
    W = np.broadcast_to(np.asarray(W, dtype=float), v.shape)
    if tau < 0:
        raise InvalidParameter(f"tau must be nonnegative, got {tau}")
    a = np.abs(v)
    out = v.copy()
    mask = W > 0
    if float(np.sum(W[mask] * a[mask])) <= tau:
        return out
    if tau == 0:
        out[mask] = 0.0
        return out
    wm, am = W[mask], a[mask]
    t = am / wm
    order = np.argsort(-t)
    ws, as_, ts = wm[order], am[order], t[order]
    theta = (np.cumsum(ws * as_) - tau) / np.cumsum(ws * ws)
    j = np.nonzero(ts > theta)[0][-1]
    out[mask] = np.sign(v[mask]) * np.maximum(am - theta[j] * wm, 0.0)
    return out


def sparse_smooth_lasso(sys, spec, max_iter=20000, tol=1e-6, memory=10, gamma=1e-4):
    """Spectral projected gradient for the weighted-l1-constrained problem.

    Barzilai-Borwein steps (clipped to ``[1e-10, 1e10]``) with a nonmonotone
    Armijo safeguard over the last ``memory`` objective values.  Stops when
    ``|P(x - grad) - x| <= tol (1 + |c|)``.  ``info["lam"]`` is the
    multiplier of the constraint, ``max |grad_i| / W_i``.
    """
    if spec.tau is None:
        raise InvalidParameter("LASSO form needs tau")
    tau = spec.tau
    W = spec.weights(sys.c.shape)
    x = project_weighted_l1(blocktri.solve(sys.C, sys.c)[0], W, tau)
    f = sys.objective(x)
    g = sys.gradient(x)
    recent = deque([f], maxlen=memory)
    alpha = 1.0 / max(float(np.max(np.abs(g))), 1e-12)
    stop = tol * (1.0 + float(np.linalg.norm(sys.c)))
    trace = []
    for _ in range(max_iter):
        pg = float(np.linalg.norm(project_weighted_l1(x - g, W, tau) - x))
        trace.append({"objective": f, "reference": max(recent), "pg_norm": pg, "step": alpha})
        if pg <= stop:
            break
        d = project_weighted_l1(x - alpha * g, W, tau) - x
        slope = float(np.sum(g * d))
        t = 1.0
        ref = max(recent)
        while True:
            x_new = x + t * d
            f_new = sys.objective(x_new)
            if f_new <= ref + gamma * t * slope or t < 1e-12:
                break
            t *= 0.5
        g_new = sys.gradient(x_new)
        sk, yk = x_new - x, g_new - g
        sy = float(np.sum(sk * yk))
        alpha = float(np.clip(np.sum(sk * sk) / sy, 1e-10, 1e10)) if sy > 0 else 1e10
        x, f, g = x_new, f_new, g_new
        recent.append(f)
    else:
        raise MaxIterReached(f"projected gradient stopped after {max_iter} iterations, "
                             f"projected-gradient norm {trace[-1]['pg_norm']:.3e}", residual=trace[-1]["pg_norm"])
    active = W > 0
    lam = float(np.max(np.abs(g[active]) / W[active])) if np.any(active) and np.sum(W * np.abs(x)) >= tau * (1 - 1e-9) else 0.0
    return SmootherSolution(
        x=x,
        objective=f,
        residual_norm=trace[-1]["pg_norm"],
        iterations=len(trace) - 1,
        trace=trace,
        info={"lam": lam},
    )
