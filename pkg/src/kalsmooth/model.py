"""State-space model containers, stacked evaluation, and the model catalog.

Conventions
-----------
* Time indices are zero-based: ``x[k]`` is the state at step ``k``, for
  ``k = 0..N-1``.
* ``w`` has shape ``(N, n)``.  Its first row is the prior mean of ``x[0]``
  (the propagated initial condition); later rows are process offsets, zero
  for the usual models.
* Measurements are ragged: ``z[k]`` has length ``m(k)`` and may be empty.
"""

from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import sparse

from .errors import InvalidParameter, NotPositiveDefinite, ShapeMismatch


def cholesky_blocks(mats, what="covariance"):
    """Lower Cholesky factors of a sequence of SPD matrices."""
    out = []
    for k, M in enumerate(mats):
        M = np.asarray(M, dtype=float)
        if M.size == 0:
            out.append(M.reshape(0, 0))
            continue
        try:
            out.append(np.linalg.cholesky(M))
        except np.linalg.LinAlgError:
            raise NotPositiveDefinite(f"{what} at time index {k} is not positive definite", block=k) from None
    return out


class Whitener:
    """Applies ``L_k^{-1}`` blockwise for covariances ``S_k = L_k L_k'``.

    Blocks may have different sizes (including zero).  Stacked residuals are
    whitened with one sparse product, which keeps objective evaluations cheap
    inside line searches.  ``symmetric=True`` uses ``S_k^{-1/2}`` instead of
    the inverse Cholesky factor.
    """

    def __init__(self, mats, what="covariance", symmetric=False):
        if symmetric:
            inv = inv_sqrt_blocks(mats, what)
        else:
            inv = [np.linalg.inv(L) if L.size else L for L in cholesky_blocks(mats, what)]
        self.sizes = [L.shape[0] for L in inv]
        self.inv_blocks = inv
        self.matrix = sparse.block_diag(inv, format="csr") if sum(self.sizes) else sparse.csr_matrix((0, 0))

    def apply(self, r):
        """Whiten a stacked residual; accepts flat arrays or ragged lists."""
        if not isinstance(r, np.ndarray) or r.ndim != 1:
            r = flatten(r)
        return self.matrix @ r

    def half_norm2(self, r):
        """``1/2 r' S^{-1} r``."""
        v = self.apply(r)
        return 0.5 * float(v @ v)


def inv_sqrt_blocks(mats, what="covariance"):
    """Symmetric inverse square roots ``S_k^{-1/2}`` (empty blocks pass through)."""
    mats = [np.asarray(S, dtype=float) for S in mats]
    shapes = {S.shape for S in mats}
    if len(shapes) == 1 and mats and mats[0].size:
        # uniform sizes: one batched eigendecomposition
        S = np.stack(mats)
        vals, vecs = np.linalg.eigh(0.5 * (S + S.transpose(0, 2, 1)))
        bad = np.nonzero(~(vals[:, 0] > 0))[0]
        if bad.size:
            raise NotPositiveDefinite(f"{what} at time index {bad[0]} is not positive definite", block=int(bad[0]))
        return list((vecs / np.sqrt(vals)[:, None, :]) @ vecs.transpose(0, 2, 1))
    out = []
    for k, S in enumerate(mats):
        if S.size == 0:
            out.append(S.reshape(0, 0))
            continue
        vals, vecs = np.linalg.eigh(0.5 * (S + S.T))
        if not vals[0] > 0:
            raise NotPositiveDefinite(f"{what} at time index {k} is not positive definite", block=k)
        out.append((vecs / np.sqrt(vals)) @ vecs.T)
    return out


def _as_list(seq, N, name):
    if len(seq) != N:
        raise ShapeMismatch(f"{name} must have {N} entries, got {len(seq)}")
    return [np.atleast_1d(np.asarray(s, dtype=float)) for s in seq]


def flatten(parts):
    """Concatenate ragged per-step vectors into one stacked vector."""
    parts = list(parts)
    if not parts:
        return np.zeros(0)
    return np.concatenate([np.ravel(p) for p in parts])


def split(flat, sizes):
    return np.split(np.asarray(flat, dtype=float), np.cumsum(sizes)[:-1])


@dataclass(frozen=True)
class LinearStateSpace:
    """Linear-Gaussian model ``x_k = G_k x_{k-1} + w_k + noise``, ``z_k = H_k x_k + noise``.

    ``G[0]`` is never used by the objective (the initial condition is carried
    by ``w[0]``) and is kept only so that ``G`` indexes like the other arrays.
    """

    G: np.ndarray
    Q: np.ndarray
    H: Sequence[np.ndarray]
    R: Sequence[np.ndarray]
    z: Sequence[np.ndarray]
    w: np.ndarray

    def __post_init__(self):
        G = np.asarray(self.G, dtype=float)
        Q = np.asarray(self.Q, dtype=float)
        if G.ndim != 3 or G.shape[1] != G.shape[2]:
            raise ShapeMismatch(f"G must be (N, n, n), got {G.shape}")
        N, n, _ = G.shape
        if Q.shape != (N, n, n):
            raise ShapeMismatch(f"Q must be {(N, n, n)}, got {Q.shape}")
        w = np.asarray(self.w, dtype=float)
        if w.shape != (N, n):
            raise ShapeMismatch(f"w must be {(N, n)}, got {w.shape}")
        z = _as_list(self.z, N, "z")
        H = [np.asarray(h, dtype=float).reshape(len(zk), n) for h, zk in zip(_as_list(self.H, N, "H"), z)]
        R = [np.asarray(r, dtype=float).reshape(len(zk), len(zk)) for r, zk in zip(_as_list(self.R, N, "R"), z)]
        for name, val in (("G", G), ("Q", Q), ("w", w), ("H", tuple(H)), ("R", tuple(R)), ("z", tuple(z))):
            object.__setattr__(self, name, val)

    @property
    def N(self):
        return self.G.shape[0]

    @property
    def n(self):
        return self.G.shape[1]

    @property
    def m(self):
        return [len(zk) for zk in self.z]

    def with_measurements(self, z, H=None, R=None):
        """Copy with replaced measurement data (used for masking and refits)."""
        return replace(self, z=z, H=self.H if H is None else H, R=self.R if R is None else R)

    def mask(self, keep):
        """Drop measurement components where ``keep`` (ragged, boolean) is False."""
        z, H, R = [], [], []
        for k in range(self.N):
            sel = np.asarray(keep[k], dtype=bool)
            z.append(self.z[k][sel])
            H.append(self.H[k][sel])
            R.append(self.R[k][np.ix_(sel, sel)])
        return replace(self, z=z, H=H, R=R)

    def as_nonlinear(self):
        """Wrap as a :class:`NonlinearStateSpace`; process offsets move into ``g``."""
        G, H, w = self.G, self.H, self.w
        return NonlinearStateSpace(
            n=self.n,
            N=self.N,
            g=lambda k, x: G[k] @ x + w[k],
            g_jac=lambda k, x: G[k],
            h=lambda k, x: H[k] @ x,
            h_jac=lambda k, x: H[k],
            Q=self.Q,
            R=self.R,
            z=self.z,
            w0=self.w[0],
            affine=True,
        )


@dataclass(frozen=True)
class NonlinearStateSpace:
    """Model ``x_k = g(k, x_{k-1}) + noise``, ``z_k = h(k, x_k) + noise``.

    ``g(k, x)`` is the transition into step ``k`` (only ``k >= 1`` enters the
    objective; ``g(0, x0)`` is used by simulation).  ``w0`` is the prior mean
    of ``x[0]``, which may deliberately differ from ``g(0, x0)``.  Missing
    Jacobians fall back to central differences (``fd_jacobian`` is then set).
    """

    n: int
    N: int
    g: Callable
    h: Callable
    Q: np.ndarray
    R: Sequence[np.ndarray]
    z: Sequence[np.ndarray]
    w0: np.ndarray
    g_jac: Optional[Callable] = None
    h_jac: Optional[Callable] = None
    x0: Optional[np.ndarray] = None
    affine: bool = False
    times: Optional[np.ndarray] = None
    fd_jacobian: bool = field(init=False, default=False)

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        if Q.shape != (self.N, self.n, self.n):
            raise ShapeMismatch(f"Q must be {(self.N, self.n, self.n)}, got {Q.shape}")
        z = _as_list(self.z, self.N, "z")
        R = [np.asarray(r, dtype=float).reshape(len(zk), len(zk)) for r, zk in zip(_as_list(self.R, self.N, "R"), z)]
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "z", tuple(z))
        object.__setattr__(self, "R", tuple(R))
        object.__setattr__(self, "w0", np.asarray(self.w0, dtype=float).reshape(self.n))
        fd = False
        if self.g_jac is None:
            object.__setattr__(self, "g_jac", _fd_jacobian(self.g))
            fd = True
        if self.h_jac is None:
            object.__setattr__(self, "h_jac", _fd_jacobian(self.h))
            fd = True
        object.__setattr__(self, "fd_jacobian", fd)

    @property
    def m(self):
        return [len(zk) for zk in self.z]

    @property
    def w(self):
        w = np.zeros((self.N, self.n))
        w[0] = self.w0
        return w

    def with_measurements(self, z, R=None):
        return replace(self, z=z, R=self.R if R is None else R)


def _fd_jacobian(fun):
    def jac(k, x):
        x = np.asarray(x, dtype=float)
        f0 = np.atleast_1d(fun(k, x))
        J = np.empty((f0.size, x.size))
        step = 1e-6 * (1.0 + np.linalg.norm(x))
        for j in range(x.size):
            e = np.zeros_like(x)
            e[j] = step
            J[:, j] = (np.atleast_1d(fun(k, x + e)) - np.atleast_1d(fun(k, x - e))) / (2 * step)
        return J

    return jac


@dataclass(frozen=True)
class ConstraintSet:
    """Per-step inequality constraints ``xi(k, x_k) <= b[k]``.

    Affine sets carry ``B`` (list of (l_k, n) arrays) and evaluate ``B_k x``;
    nonlinear sets carry ``xi``/``xi_jac`` callables.
    """

    b: Sequence[np.ndarray]
    B: Optional[Sequence[np.ndarray]] = None
    xi: Optional[Callable] = None
    xi_jac: Optional[Callable] = None

    def __post_init__(self):
        b = [np.atleast_1d(np.asarray(bk, dtype=float)) for bk in self.b]
        object.__setattr__(self, "b", tuple(b))
        if self.B is not None:
            object.__setattr__(self, "B", tuple(np.asarray(Bk, dtype=float).reshape(len(bk), -1) for Bk, bk in zip(self.B, b)))
        elif self.xi is None:
            raise InvalidParameter("constraint set needs either B or xi")

    @property
    def affine(self):
        return self.B is not None

    def value(self, k, x):
        if self.affine:
            return self.B[k] @ x
        return np.atleast_1d(self.xi(k, x))

    def jacobian(self, k, x):
        if self.affine:
            return self.B[k]
        return np.atleast_2d(self.xi_jac(k, x))

    def evaluate(self, x):
        """Stacked constraint values and block-diagonal Jacobian blocks."""
        vals = [self.value(k, x[k]) for k in range(len(self.b))]
        jacs = [self.jacobian(k, x[k]).reshape(len(self.b[k]), -1) for k in range(len(self.b))]
        return vals, jacs

    def max_violation(self, x):
        vals, _ = self.evaluate(x)
        viol = [v - bk for v, bk in zip(vals, self.b) if len(bk)]
        return float(max((np.max(v) for v in viol), default=-np.inf))


# -- stacked evaluation -----------------------------------------------------


def _check_traj(model, x):
    x = np.asarray(x, dtype=float)
    if x.shape != (model.N, model.n):
        raise ShapeMismatch(f"trajectory must be {(model.N, model.n)}, got {x.shape}")
    return x


def eval_stacked(model, x):
    """Return ``(g(x), h(x))``.

    ``g(x)`` has rows ``x_0`` and ``x_k - g_k(x_{k-1})``; ``h(x)`` is the list
    of ``h_k(x_k)``.
    """
    x = _check_traj(model, x)
    gx = np.empty_like(x)
    gx[0] = x[0]
    for k in range(1, model.N):
        gx[k] = x[k] - model.g(k, x[k - 1])
    hx = [np.atleast_1d(model.h(k, x[k])).reshape(m) for k, m in enumerate(model.m)]
    return gx, hx


def linearize(model, x):
    """Linearize the residual maps around trajectory ``x``.

    Returns a :class:`LinearStateSpace` whose transition blocks are the
    process Jacobians, measurement blocks the measurement Jacobians, and
    whose data are ``w - g(x)`` and ``z - h(x)``.  Its least-squares problem
    in the step ``d`` is the Gauss-Newton subproblem.
    """
    x = _check_traj(model, x)
    N, n = model.N, model.n
    gx, hx = eval_stacked(model, x)
    G = np.zeros((N, n, n))
    for k in range(1, N):
        G[k] = np.asarray(model.g_jac(k, x[k - 1]), dtype=float).reshape(n, n)
    H = [np.asarray(model.h_jac(k, x[k]), dtype=float).reshape(m, n) for k, m in enumerate(model.m)]
    w = model.w - gx
    z = [zk - hk for zk, hk in zip(model.z, hx)]
    return LinearStateSpace(G=G, Q=model.Q, H=H, R=model.R, z=z, w=w)


def propagate(model, steps=None):
    """Noise-free trajectory started from the prior mean ``w0``."""
    N = model.N if steps is None else steps
    x = np.empty((N, model.n))
    x[0] = model.w0
    for k in range(1, N):
        x[k] = model.g(k, x[k - 1])
    return x


# -- catalog ----------------------------------------------------------------


def sde_covariance(dt, sigma2=1.0):
    """Integrated-Brownian-motion covariance for a (derivative, value) pair."""
    return sigma2 * np.array([[dt, dt**2 / 2], [dt**2 / 2, dt**3 / 3]])


def smooth_signal_model(N, dt, sigma2, R, z=None, w0=None, Q0=None, H=None):
    """Smooth-signal model: state ``(derivative, value)`` with direct value measurements.

    ``R`` is the scalar measurement variance.  The first-step covariance
    defaults to the same SDE covariance as the later steps; pass ``Q0`` to
    use a vaguer prior for ``x[0]``.
    """
    if not dt > 0:
        raise InvalidParameter(f"dt must be positive, got {dt}")
    if not sigma2 > 0:
        raise InvalidParameter(f"sigma2 must be positive, got {sigma2}")
    if not np.all(np.asarray(R) > 0):
        raise InvalidParameter(f"measurement variance must be positive, got {R}")
    Gk = np.array([[1.0, 0.0], [dt, 1.0]])
    Qk = sde_covariance(dt, sigma2)
    G = np.tile(Gk, (N, 1, 1))
    Q = np.tile(Qk, (N, 1, 1))
    if Q0 is not None:
        Q[0] = Q0
    Hk = np.array([[0.0, 1.0]]) if H is None else np.atleast_2d(H)
    z = [np.zeros(1)] * N if z is None else [np.atleast_1d(zk) for zk in z]
    w = np.zeros((N, 2))
    if w0 is not None:
        w[0] = w0
    return LinearStateSpace(
        G=G, Q=Q, H=[Hk] * N, R=[np.atleast_2d(R)] * N, z=z, w=w,
    )


def vanderpol_g(mu, dt, scheme="implicit"):
    """Discretized Van der Pol transition and its Jacobian.

    ``scheme="implicit"`` advances the first component explicitly and then
    solves the second-row update, which is linear in the new velocity::

        x1' = x1 + x2 dt
        x2' = x2 + (mu (1 - x1'^2) x2' - x1') dt

    This stays bounded at step sizes where forward Euler diverges, provided
    ``mu * dt < 1``.  ``scheme="explicit"`` is plain forward Euler.
    """
    if scheme == "explicit":
        def g(k, x):
            x1, x2 = x
            return np.array([x1 + x2 * dt, x2 + (mu * (1 - x1**2) * x2 - x1) * dt])

        def g_jac(k, x):
            x1, x2 = x
            return np.array([[1.0, dt], [(-2 * mu * x1 * x2 - 1) * dt, 1 + mu * (1 - x1**2) * dt]])

        return g, g_jac
    if scheme != "implicit":
        raise InvalidParameter(f"unknown Van der Pol scheme {scheme!r}")
    if mu * dt >= 1:
        raise InvalidParameter(f"implicit scheme needs mu * dt < 1, got {mu * dt}")

    def g(k, x):
        x1, x2 = x
        y1 = x1 + x2 * dt
        return np.array([y1, (x2 - y1 * dt) / (1 - mu * (1 - y1**2) * dt)])

    def g_jac(k, x):
        x1, x2 = x
        y1 = x1 + x2 * dt
        D = 1 - mu * (1 - y1**2) * dt
        y2 = (x2 - y1 * dt) / D
        dy1 = -(dt + 2 * mu * dt * y1 * y2) / D
        return np.array([[1.0, dt], [dy1, 1 / D + dy1 * dt]])

    return g, g_jac


def vanderpol_model(mu=2.0, N=80, dt=None, Q0=0.1, Q=0.01, x0=(0.0, -0.5), w0=(0.1, -0.4), R=1.0, z=None,
                    scheme="implicit"):
    """Discretized Van der Pol oscillator measured in its first component.

    ``Q0``, ``Q`` and ``R`` are scalar variances (times identity).  ``dt``
    defaults to ``30 / N``.  See :func:`vanderpol_g` for ``scheme``.
    """
    dt = 30.0 / N if dt is None else dt
    if not dt >= 0:
        raise InvalidParameter(f"dt must be nonnegative, got {dt}")
    if not (Q0 > 0 and Q > 0 and R > 0):
        raise InvalidParameter("variances must be positive")
    g, g_jac = vanderpol_g(mu, dt, scheme)
    Qs = np.tile(Q * np.eye(2), (N, 1, 1))
    Qs[0] = Q0 * np.eye(2)
    Hk = np.array([[1.0, 0.0]])
    return NonlinearStateSpace(
        n=2,
        N=N,
        g=g,
        g_jac=g_jac,
        h=lambda k, x: x[:1],
        h_jac=lambda k, x: Hk,
        Q=Qs,
        R=[np.array([[R]])] * N,
        z=[np.zeros(1)] * N if z is None else z,
        w0=np.asarray(w0, dtype=float),
        x0=np.asarray(x0, dtype=float),
        times=dt * np.arange(1, N + 1),
    )


SHIP_STATIONS = np.array([[0.0, 0.0], [2 * np.pi, 0.0]])


def ship_truth(t):
    """Ship state ``(v_x, x, v_y, y)`` at times ``t``."""
    t = np.asarray(t, dtype=float)
    return np.stack([np.ones_like(t), t, -np.cos(t), 1.3 - np.sin(t)], axis=-1)


def ship_model(N=100, dt=None, sigma2=0.05, z=None):
    """Ship tracked by range measurements from two shore stations.

    Each position component follows the smooth-signal model (so the
    transition block for the second position is ``[[1, 0], [dt, 1]]``), the
    prior on ``x[0]`` is centred on the true state with covariance ``100 I``,
    and the shoreline constraint is ``1.25 - sin(x_pos) - y_pos <= 0``.
    """
    dt = 2 * np.pi / N if dt is None else dt
    if not dt > 0:
        raise InvalidParameter(f"dt must be positive, got {dt}")
    if not sigma2 > 0:
        raise InvalidParameter(f"sigma2 must be positive, got {sigma2}")
    Gk = np.array([[1.0, 0, 0, 0], [dt, 1, 0, 0], [0, 0, 1, 0], [0, 0, dt, 1]])
    Qk = np.zeros((4, 4))
    Qk[:2, :2] = sde_covariance(dt)
    Qk[2:, 2:] = sde_covariance(dt)
    Q = np.tile(Qk, (N, 1, 1))
    Q[0] = 100 * np.eye(4)
    times = dt * np.arange(1, N + 1)

    def h(k, x):
        return np.array([np.hypot(x[1] - sx, x[3] - sy) for sx, sy in SHIP_STATIONS])

    def h_jac(k, x):
        J = np.zeros((2, 4))
        for i, (sx, sy) in enumerate(SHIP_STATIONS):
            r = np.hypot(x[1] - sx, x[3] - sy)
            J[i, 1] = (x[1] - sx) / r
            J[i, 3] = (x[3] - sy) / r
        return J

    model = NonlinearStateSpace(
        n=4,
        N=N,
        g=lambda k, x: Gk @ x,
        g_jac=lambda k, x: Gk,
        h=h,
        h_jac=h_jac,
        Q=Q,
        R=[sigma2 * np.eye(2)] * N,
        z=[np.zeros(2)] * N if z is None else z,
        w0=ship_truth(times[0]),
        times=times,
    )
    constraints = ConstraintSet(
        b=[np.zeros(1)] * N,
        xi=lambda k, x: np.array([1.25 - np.sin(x[1]) - x[3]]),
        xi_jac=lambda k, x: np.array([[0.0, -np.cos(x[1]), 0.0, -1.0]]),
    )
    return model, constraints


MODEL_CATALOG = {
    "smooth_signal": smooth_signal_model,
    "vanderpol": vanderpol_model,
    "ship": ship_model,
}


def build_model(name, **params):
    """Look up a catalog model by name."""
    try:
        factory = MODEL_CATALOG[name]
    except KeyError:
        raise InvalidParameter(f"unknown model {name!r}; available: {sorted(MODEL_CATALOG)}") from None
    return factory(**params)
