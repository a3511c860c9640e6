"""Linear-Gaussian smoother: normal equations solved by the block kernel.

The quadratic is stored as ``f(x) = 1/2 x'Cx - c'x + offset`` with
``C = H'R^{-1}H + G'Q^{-1}G`` and ``c = H'R^{-1}z + G'Q^{-1}w``.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_solve

from . import blocktri
from .blocktri import BlockTriMatrix
from .errors import NotPositiveDefinite, ShapeMismatch
from .model import Whitener, cholesky_blocks


@dataclass(frozen=True)
class NormalSystem:
    C: BlockTriMatrix
    c: np.ndarray
    offset: float = 0.0

    def objective(self, x):
        return float(0.5 * np.sum(x * blocktri.multiply(self.C, x)) - np.sum(self.c * x) + self.offset)

    def gradient(self, x):
        return blocktri.multiply(self.C, x) - self.c


@dataclass
class SmootherSolution:
    """Trajectory estimate plus solver diagnostics.

    ``trace`` holds one dict per outer iteration; ``info`` carries
    solver-specific extras (duals, filter estimates, ...).
    """

    x: np.ndarray
    objective: float
    residual_norm: float
    iterations: int = 1
    status: str = "converged"
    trace: list = field(default_factory=list)
    info: dict = field(default_factory=dict)


def inverse_blocks(chols):
    out = []
    for L in chols:
        if L.size == 0:
            out.append(L)
        else:
            out.append(cho_solve((L, True), np.eye(L.shape[0]), check_finite=False))
    return out


def apply_G(G, x):
    """``G x`` for the bidiagonal process operator (identity blocks, ``-G_k`` below)."""
    y = x.copy()
    y[1:] -= np.einsum("kij,kj->ki", G[1:], x[:-1])
    return y


def apply_Gt(G, v):
    """``G' v``."""
    y = v.copy()
    y[:-1] -= np.einsum("kji,kj->ki", G[1:], v[1:])
    return y


def gram(G, Wq, H=None, Wr=None):
    """Block-tridiagonal ``G' diag(Wq) G + H' diag(Wr) H``.

    Diagonal block ``k`` is ``Wq_k + G_{k+1}' Wq_{k+1} G_{k+1} + H_k' Wr_k H_k``
    (the ``k + 1`` term is absent at the last step); the block below it is
    ``-Wq_k G_k``.
    """
    G = np.asarray(G)
    Wq = np.asarray(Wq)
    diag = Wq.copy()
    diag[:-1] += np.einsum("kji,kjl,klm->kim", G[1:], Wq[1:], G[1:])
    if H is not None:
        for k, (Hk, Wk) in enumerate(zip(H, Wr)):
            if Hk.size:
                diag[k] += Hk.T @ Wk @ Hk
    sub = -np.einsum("kij,kjl->kil", Wq[1:], G[1:])
    return BlockTriMatrix(diag, sub)


def assemble(model):
    """Normal equations ``C x = c`` of the linear smoothing problem."""
    Qc = cholesky_blocks(model.Q, "process covariance Q")
    Rc = cholesky_blocks(model.R, "measurement covariance R")
    Qinv = np.stack(inverse_blocks(Qc))
    Rinv = inverse_blocks(Rc)
    C = gram(model.G, Qinv, model.H, Rinv)
    Qw = np.einsum("kij,kj->ki", Qinv, model.w)
    c = apply_Gt(model.G, Qw)
    offset = 0.5 * float(np.sum(model.w * Qw))
    for k, (Hk, Rk, zk) in enumerate(zip(model.H, Rinv, model.z)):
        if zk.size:
            Rz = Rk @ zk
            c[k] += Hk.T @ Rz
            offset += 0.5 * float(zk @ Rz)
    return NormalSystem(C=C, c=c, offset=offset)


def objective(model, x):
    """``1/2 |Hx - z|^2_{R^-1} + 1/2 |Gx - w|^2_{Q^-1}`` evaluated from residuals."""
    x = np.asarray(x, dtype=float)
    if x.shape != (model.N, model.n):
        raise ShapeMismatch(f"trajectory must be {(model.N, model.n)}, got {x.shape}")
    rw = apply_G(model.G, x) - model.w
    rz = [Hk @ xk - zk for Hk, xk, zk in zip(model.H, x, model.z)]
    return Whitener(model.Q).half_norm2(rw.ravel()) + Whitener(model.R).half_norm2(rz)


def smooth_system(sys):
    """Minimize ``1/2 x'Cx - c'x`` for an assembled system."""
    x, F = blocktri.solve(sys.C, sys.c)
    return SmootherSolution(
        x=x,
        objective=sys.objective(x),
        residual_norm=float(np.linalg.norm(sys.gradient(x))),
        info={"factor": F, "rhs_norm": float(np.linalg.norm(sys.c))},
    )


def smooth(model):
    """Minimize the linear smoothing objective with one block-tridiagonal solve."""
    return smooth_system(assemble(model))


def filter_estimates(model):
    """Filtered means ``x_{k|k}`` read off the forward elimination sweep.

    The eliminated blocks satisfy ``d_k = P_{k|k}^{-1} + G_{k+1}'Q_{k+1}^{-1}G_{k+1}``
    and ``s_k = P_{k|k}^{-1} x_{k|k} - G_{k+1}'Q_{k+1}^{-1}w_{k+1}`` (no correction
    at the last step), so peeling off the look-ahead terms recovers the
    information-form filter.
    """
    sys = assemble(model)
    F = blocktri.forward(sys.C, sys.c)
    Qinv = np.stack(inverse_blocks(cholesky_blocks(model.Q)))
    G, w = model.G, model.w
    out = np.empty((model.N, model.n))
    for k in range(model.N):
        info = F.d[k].copy()
        a = F.s[k].copy()
        if k + 1 < model.N:
            info -= G[k + 1].T @ Qinv[k + 1] @ G[k + 1]
            a += G[k + 1].T @ Qinv[k + 1] @ w[k + 1]
        try:
            L = np.linalg.cholesky(0.5 * (info + info.T))
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(f"filter information matrix at time index {k} is not positive definite", block=k) from None
        out[k] = cho_solve((L, True), a, check_finite=False)
    return out
