"""Piecewise linear-quadratic (PLQ) penalties and the PLQ smoother.

A PLQ penalty is

    rho(y) = sup { <u, b + B y> - 1/2 u'Mu  :  A'u <= a }.

The catalog covers the quadratic, l1, Huber and Vapnik penalties.  The
smoother applies a scalar penalty to every component of the whitened
residuals ``Q^{-1/2}(Gx - w)`` and ``R^{-1/2}(Hx - z)`` and solves the
saddle-point conditions by a primal-dual interior-point method.
"""

import itertools
import re
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import linprog

from . import blocktri, linear
from .blocktri import BlockDiagonal
from .constrained import IPOptions, mu_schedule, step_to_boundary
from .errors import InvalidParameter, MaxIterReached, NotInCatalog, ShapeMismatch, Unbounded
from .linear import SmootherSolution, apply_G, apply_Gt, gram
from .model import flatten, inv_sqrt_blocks

CATALOG = ("l2", "l1", "huber", "vapnik")


@dataclass(frozen=True)
class PLQPenalty:
    """Penalty data ``(A, a, M, b, B)`` with ``U = {u : A'u <= a}``.

    Parameters
    ----------
    A : (m, k) array
    a : (k,) array
    M : (m, m) symmetric positive semidefinite array
    b : (m,) array
    B : (m, d) array, injective
    kind, params : catalog tag and its parameters (``None`` for general input)
    u0 : optional strictly interior point of ``U`` used to start the smoother
    """

    A: np.ndarray
    a: np.ndarray
    M: np.ndarray
    b: np.ndarray
    B: np.ndarray
    kind: Optional[str] = None
    params: dict = field(default_factory=dict)
    u0: Optional[np.ndarray] = None

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=float))
        m = M.shape[0]
        if M.shape != (m, m):
            raise ShapeMismatch(f"M must be square, got {M.shape}")
        A = np.asarray(self.A, dtype=float).reshape(m, -1)
        a = np.asarray(self.a, dtype=float).reshape(A.shape[1])
        b = np.asarray(self.b, dtype=float).reshape(m)
        B = np.asarray(self.B, dtype=float).reshape(m, -1)
        M = 0.5 * (M + M.T)
        if m and np.linalg.eigvalsh(M)[0] < -1e-12:
            raise InvalidParameter("M must be positive semidefinite")
        if np.linalg.matrix_rank(B) < B.shape[1]:
            raise InvalidParameter("B must be injective")
        u0 = np.zeros(m) if self.u0 is None else np.asarray(self.u0, dtype=float).reshape(m)
        for name, val in (("A", A), ("a", a), ("M", M), ("b", b), ("B", B), ("u0", u0)):
            object.__setattr__(self, name, val)

    @property
    def dim(self):
        """Dimension of the argument ``y``."""
        return self.B.shape[1]

    def __str__(self):
        if self.kind is None:
            return "plq"
        if not self.params:
            return self.kind
        return f"{self.kind}({', '.join(f'{v:g}' for v in self.params.values())})"


def l2():
    return PLQPenalty(A=np.zeros((1, 0)), a=np.zeros(0), M=np.eye(1), b=np.zeros(1), B=np.ones((1, 1)), kind="l2")


def l1(weight=np.sqrt(2.0)):
    """``weight * |y|``; the default matches the l1-Laplace density."""
    if not weight > 0:
        raise InvalidParameter(f"l1 weight must be positive, got {weight}")
    return PLQPenalty(A=np.array([[1.0, -1.0]]), a=np.array([weight, weight]), M=np.zeros((1, 1)),
                      b=np.zeros(1), B=np.ones((1, 1)), kind="l1", params={"weight": weight})


def huber(K=1.0):
    if not K > 0:
        raise InvalidParameter(f"Huber K must be positive, got {K}")
    return PLQPenalty(A=np.array([[1.0, -1.0]]), a=np.array([K, K]), M=np.eye(1),
                      b=np.zeros(1), B=np.ones((1, 1)), kind="huber", params={"K": K})


def vapnik(eps=0.5):
    """``max(|y| - eps, 0)`` with ``U = [0, 1]^2``, ``B = (1, -1)``, ``b = (-eps, -eps)``."""
    if not eps >= 0:
        raise InvalidParameter(f"Vapnik eps must be nonnegative, got {eps}")
    A = np.array([[1.0, -1.0, 0.0, 0.0], [0.0, 0.0, 1.0, -1.0]])
    return PLQPenalty(A=A, a=np.array([1.0, 0.0, 1.0, 0.0]), M=np.zeros((2, 2)), b=np.array([-eps, -eps]),
                      B=np.array([[1.0], [-1.0]]), kind="vapnik", params={"eps": eps}, u0=np.array([0.5, 0.5]))


_FACTORIES = {"l2": l2, "l1": l1, "huber": huber, "vapnik": vapnik}


def from_name(spec):
    """Parse ``l2``, ``l1``, ``l1(w)``, ``huber(K)`` or ``vapnik(eps)``."""
    m = re.fullmatch(r"\s*([a-z0-9]+)\s*(?:\(\s*([^)]*)\))?\s*", str(spec).lower())
    if not m or m.group(1) not in _FACTORIES:
        raise InvalidParameter(f"unknown penalty {spec!r}; available: l2, l1, huber(K), vapnik(eps)")
    args = [float(v) for v in m.group(2).split(",")] if m.group(2) else []
    try:
        return _FACTORIES[m.group(1)](*args)
    except TypeError:
        raise InvalidParameter(f"wrong number of parameters in {spec!r}") from None


def _closed_form(rho, y):
    kind, p = rho.kind, rho.params
    if kind == "l2":
        return 0.5 * y**2
    if kind == "l1":
        return p["weight"] * np.abs(y)
    if kind == "huber":
        K = p["K"]
        ay = np.abs(y)
        return np.where(ay <= K, 0.5 * y**2, K * ay - 0.5 * K**2)
    if kind == "vapnik":
        return np.maximum(np.abs(y) - p["eps"], 0.0)
    raise NotInCatalog(f"no closed form for penalty kind {kind!r}")


def _sup_general(rho, y, tol=1e-9):
    """Value of the concave maximization defining ``rho(y)``.

    Unboundedness is certified by a ray ``r`` with ``A'r <= 0``, ``Mr = 0``
    and ``<r, b + By> > 0``.  Otherwise the maximum is attained and found by
    enumerating active sets of the (small) constraint system.
    """
    A, a, M = rho.A, rho.a, rho.M
    g = rho.b + rho.B @ y
    m, k = A.shape
    # improving ray: maximize g'r over A'r <= 0, Mr = 0, |r|_inf <= 1
    res = linprog(-g, A_ub=A.T if k else None, b_ub=np.zeros(k) if k else None,
                  A_eq=M if m else None, b_eq=np.zeros(m) if m else None, bounds=[(-1, 1)] * m, method="highs")
    if res.status == 0 and -res.fun > tol * (1 + np.linalg.norm(g)):
        raise Unbounded(f"penalty is unbounded at y={y}: improving ray {res.x}")
    if k > 16:
        raise InvalidParameter(f"general evaluation supports at most 16 constraints, got {k}")
    best = -np.inf
    scale = 1.0 + np.linalg.norm(g) + np.linalg.norm(a)
    for size in range(min(k, m) + 1):
        for S in itertools.combinations(range(k), size):
            S = list(S)
            AS = A[:, S]
            K = np.block([[M, AS], [AS.T, np.zeros((size, size))]])
            rhs = np.concatenate([g, a[S]])
            sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
            if np.linalg.norm(K @ sol - rhs) > 1e-9 * scale:
                continue
            u, lam = sol[:m], sol[m:]
            if np.any(lam < -1e-9 * scale) or (k and np.any(A.T @ u > a + 1e-9 * scale)):
                continue
            best = max(best, float(g @ u - 0.5 * u @ M @ u))
    if best == -np.inf:
        raise InvalidParameter("could not locate a maximizer; is U nonempty?")
    return best


def eval_plq(rho, y, general=False):
    """Evaluate ``rho`` at ``y``.

    For scalar penalties (``rho.dim == 1``) an array ``y`` is evaluated
    componentwise and summed.  Catalog entries use closed forms unless
    ``general=True``.
    """
    y = np.asarray(y, dtype=float)
    if rho.dim == 1:
        ys = np.atleast_1d(y).ravel()
        if rho.kind is not None and not general:
            return float(np.sum(_closed_form(rho, ys)))
        return float(sum(_sup_general(rho, np.array([v])) for v in ys))
    if y.shape != (rho.dim,):
        raise ShapeMismatch(f"penalty expects y of shape {(rho.dim,)}, got {y.shape}")
    return _sup_general(rho, y)


def check_coercivity_catalog(rho):
    """Coercivity hypothesis ``Null(M) and U_inf = {0}`` for catalog penalties.

    The quadratic penalty has ``M`` of full rank; the l1, Huber and Vapnik
    sets ``U`` are bounded, so their recession cone is trivial.
    """
    if rho.kind not in CATALOG:
        raise NotInCatalog("coercivity is only decided for the l2, l1, Huber and Vapnik penalties")
    if rho.kind == "l2":
        return bool(np.linalg.matrix_rank(rho.M) == rho.M.shape[0])
    # bounded U: no nonzero r with A'r <= 0
    m = rho.A.shape[0]
    for sign in (1.0, -1.0):
        for i in range(m):
            c = np.zeros(m)
            c[i] = -sign
            res = linprog(c, A_ub=rho.A.T, b_ub=np.zeros(rho.A.shape[1]), bounds=[(-1, 1)] * m, method="highs")
            if res.status == 0 and -res.fun > 1e-12:
                return False
    return True


# -- smoother ---------------------------------------------------------------


class _Part:
    """One residual family (process or measurement) under a scalar penalty.

    Holds the whitened affine map ``y = P x - y0`` and the per-component
    penalty copies; ``u`` has shape ``(J, m)`` and ``s, q`` shape ``(J, k)``.
    """

    def __init__(self, rho, J, forward, adjoint, y0):
        if rho.dim != 1:
            raise InvalidParameter("the smoother applies scalar penalties componentwise; got dim "
                                   f"{rho.dim}")
        self.rho = rho
        self.J = J
        self.forward = forward
        self.adjoint = adjoint
        self.y0 = y0
        self.Bv = rho.B[:, 0]

    def start(self):
        u = np.tile(self.rho.u0, (self.J, 1))
        s = np.tile(self.rho.a - self.rho.A.T @ self.rho.u0, (self.J, 1))
        if s.size and np.min(s) <= 0:
            raise InvalidParameter("penalty u0 is not strictly inside U")
        return u, s, np.ones_like(s)

    def residuals(self, x, u, s, q, mu):
        rho = self.rho
        y = self.forward(x) - self.y0
        r1 = u @ rho.A + s - rho.a
        r2 = q * s - mu
        r3 = rho.b + np.outer(y, self.Bv) - u @ rho.M - q @ rho.A.T
        return r1, r2, r3

    def back(self, u):
        """``Bbar' u`` for this family."""
        return self.adjoint(u @ self.Bv)


def _omega_inv(rho, s, q):
    A, M = rho.A, rho.M
    Om = M[None] + np.einsum("ik,jk,lk->jil", A, q / s if s.size else s, A) if A.shape[1] else np.broadcast_to(M, (len(s), *M.shape))
    return np.linalg.inv(Om)


def _process_part(rho, model, Lq):
    G = model.G

    def forward(x):
        return np.einsum("kij,kj->ki", Lq, apply_G(G, x)).ravel()

    def adjoint(t):
        return apply_Gt(G, np.einsum("kji,kj->ki", Lq, t.reshape(model.N, model.n)))

    y0 = np.einsum("kij,kj->ki", Lq, model.w).ravel()
    return _Part(rho, model.N * model.n, forward, adjoint, y0)


def _measurement_part(rho, model, Lr):
    V = BlockDiagonal([S @ Hk for S, Hk in zip(Lr, model.H)], model.n)
    y0 = flatten([S @ zk for S, zk in zip(Lr, model.z)])
    part = _Part(rho, V.size, V.apply, V.apply_t, y0)
    part.V = V
    return part


def plq_objective(model, w_penalty, v_penalty, x):
    """``rho_w(Q^{-1/2}(Gx - w)) + rho_v(R^{-1/2}(Hx - z))``."""
    Lq = np.stack(inv_sqrt_blocks(model.Q, "process covariance Q"))
    Lr = inv_sqrt_blocks(model.R, "measurement covariance R")
    pw, pv = _process_part(w_penalty, model, Lq), _measurement_part(v_penalty, model, Lr)
    return eval_plq(w_penalty, pw.forward(x) - pw.y0) + eval_plq(v_penalty, pv.forward(x) - pv.y0)


def smooth_plq(model, w_penalty=None, v_penalty=None, opts=IPOptions()):
    """PLQ smoother for a linear state-space model.

    Minimizes ``rho_w(Q^{-1/2}(Gx - w)) + rho_v(R^{-1/2}(Hx - z))`` by
    Newton steps on the relaxed saddle-point system.  After eliminating
    slacks, multipliers and duals the step solves
    ``(G'D_w G + H'D_v H) dx = rhs`` with block-diagonal ``D``, so each
    iteration costs one block-tridiagonal solve.

    The returned ``info`` holds ``u_w``, ``u_v`` (duals) and the final
    KKT residual.
    """
    w_penalty = l2() if w_penalty is None else w_penalty
    v_penalty = l2() if v_penalty is None else v_penalty
    Lq = np.stack(inv_sqrt_blocks(model.Q, "process covariance Q"))
    Lr = inv_sqrt_blocks(model.R, "measurement covariance R")
    parts = [_process_part(w_penalty, model, Lq), _measurement_part(v_penalty, model, Lr)]
    x = linear.smooth(model).x
    state = [p.start() for p in parts]
    comp = np.concatenate([(q * s).ravel() for _, s, q in state])
    mu = float(np.mean(comp)) if comp.size else 0.0
    scale = 1.0 + float(np.linalg.norm(parts[0].y0)) + float(np.linalg.norm(parts[1].y0))
    trace = []
    for it in range(opts.max_iter):
        res = [p.residuals(x, *st, mu=0.0) for p, st in zip(parts, state)]
        r4 = sum(p.back(u) for p, (u, _, _) in zip(parts, state))
        kkt = max([float(np.max(np.abs(r4)))] + [float(np.max(np.abs(r), initial=0.0)) for rs in res for r in rs])
        trace.append({"mu": mu, "kkt": kkt})
        if kkt <= opts.res_tol * scale:
            break
        # Newton step
        rhs = -r4
        Hdiag = np.zeros((model.N, model.n, model.n))
        cache = []
        for p, (u, s, q) in zip(parts, state):
            r1, r2, r3 = p.residuals(x, u, s, q, mu)
            Oinv = _omega_inv(p.rho, s, q)
            e = r3 - ((q * r1 - r2) / s) @ p.rho.A.T if s.size else r3
            v = np.einsum("jab,jb->ja", Oinv, e)
            d = np.einsum("a,jab,b->j", p.Bv, Oinv, p.Bv)
            rhs = rhs - p.back(v)
            cache.append((r1, r2, Oinv, e, d))
        dw, dv = cache[0][4].reshape(model.N, model.n), cache[1][4]
        Dw = np.einsum("kia,ka,kaj->kij", Lq, dw, Lq)
        H = gram(model.G, Dw).add_diagonal_blocks(parts[1].V.gram_blocks(dv))
        dx = blocktri.solve(H, rhs)[0]
        steps = []
        alpha = 1.0
        for p, (u, s, q), (r1, r2, Oinv, e, _) in zip(parts, state, cache):
            dy = p.forward(dx)
            du = np.einsum("jab,jb->ja", Oinv, e + np.outer(dy, p.Bv))
            ds = -r1 - du @ p.rho.A
            dq = (-r2 - q * ds) / s if s.size else ds
            alpha = min(alpha, step_to_boundary(s.ravel(), ds.ravel(), opts.fraction),
                        step_to_boundary(q.ravel(), dq.ravel(), opts.fraction))
            steps.append((du, ds, dq))
        x = x + alpha * dx
        state = [(u + alpha * du, s + alpha * ds, q + alpha * dq) for (u, s, q), (du, ds, dq) in zip(state, steps)]
        mu = mu_schedule(mu, it, alpha)
    else:
        raise MaxIterReached(f"PLQ interior point stopped after {opts.max_iter} iterations, "
                             f"KKT residual {trace[-1]['kkt']:.3e}", residual=trace[-1]["kkt"])
    return SmootherSolution(
        x=x,
        objective=plq_objective(model, w_penalty, v_penalty, x),
        residual_norm=trace[-1]["kkt"],
        iterations=len(trace) - 1,
        trace=trace,
        info={"u_w": state[0][0], "u_v": state[1][0], "penalties": (str(w_penalty), str(v_penalty))},
    )
