"""Symmetric block-tridiagonal matrices and their O(n^3 N) solver.

Block vectors are plain arrays of shape ``(N, n)`` (or ``(N, n, l)`` for
several right-hand sides at once): row ``k`` is the length-``n`` segment for
time step ``k``.  Time indices are zero-based throughout the package.

The matrix layout is::

    [ c_0   a_1^T              ]
    [ a_1   c_1   a_2^T        ]
    [       a_2   c_2   ...    ]
    [             ...  a_{N-1} c_{N-1} ]

so ``sub[k - 1]`` holds the block in row ``k``, column ``k - 1``.
"""

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import NotPositiveDefinite, ShapeMismatch


@dataclass(frozen=True)
class BlockTriMatrix:
    """Symmetric block-tridiagonal matrix.

    Parameters
    ----------
    diag : array (N, n, n)
        Diagonal blocks; symmetrized on construction.
    sub : array (N - 1, n, n)
        Sub-diagonal blocks.
    """

    diag: np.ndarray
    sub: np.ndarray

    def __post_init__(self):
        diag = np.asarray(self.diag, dtype=float)
        if diag.ndim != 3 or diag.shape[1] != diag.shape[2]:
            raise ShapeMismatch(f"diag must have shape (N, n, n), got {diag.shape}")
        N, n, _ = diag.shape
        sub = np.asarray(self.sub, dtype=float)
        if N == 1 and sub.size == 0:
            sub = np.zeros((0, n, n))
        if sub.shape != (N - 1, n, n):
            raise ShapeMismatch(f"sub must have shape {(N - 1, n, n)}, got {sub.shape}")
        diag = 0.5 * (diag + diag.transpose(0, 2, 1))
        diag.setflags(write=False)
        sub = sub.copy()
        sub.setflags(write=False)
        object.__setattr__(self, "diag", diag)
        object.__setattr__(self, "sub", sub)

    @property
    def N(self):
        return self.diag.shape[0]

    @property
    def n(self):
        return self.diag.shape[1]

    @property
    def shape(self):
        return (self.N * self.n, self.N * self.n)

    def add_diagonal_blocks(self, blocks):
        """Return ``self + diag(blocks)`` (blocks has shape (N, n, n))."""
        blocks = np.asarray(blocks, dtype=float)
        if blocks.shape != self.diag.shape:
            raise ShapeMismatch(f"expected {self.diag.shape}, got {blocks.shape}")
        return BlockTriMatrix(self.diag + blocks, self.sub)

    def __matmul__(self, x):
        return multiply(self, x)


@dataclass(frozen=True)
class ForwardFactor:
    """Intermediates of the forward elimination sweep.

    ``d[k]`` are the eliminated diagonal blocks and ``s[k]`` the eliminated
    right-hand side; ``chol[k]`` is the lower Cholesky factor of ``d[k]``.
    """

    d: np.ndarray
    s: np.ndarray
    chol: np.ndarray


def _check_rhs(A, r):
    r = np.asarray(r, dtype=float)
    if r.ndim not in (2, 3) or r.shape[:2] != (A.N, A.n):
        raise ShapeMismatch(f"right-hand side must have leading shape {(A.N, A.n)}, got {r.shape}")
    return r


@njit(cache=True)
def _chol_inplace(M, L):
    """Lower Cholesky factor of M written into L; returns False if M is not PD."""
    n = M.shape[0]
    for j in range(n):
        acc = M[j, j]
        for p in range(j):
            acc -= L[j, p] * L[j, p]
        if not acc > 0.0:
            return False
        L[j, j] = np.sqrt(acc)
        for i in range(j + 1, n):
            acc = M[i, j]
            for p in range(j):
                acc -= L[i, p] * L[j, p]
            L[i, j] = acc / L[j, j]
        for i in range(j):
            L[i, j] = 0.0
    return True


@njit(cache=True)
def _lower_solve(L, B, out):
    # out = L^{-1} B, B is (n, m)
    n, m = B.shape
    for c in range(m):
        for i in range(n):
            acc = B[i, c]
            for p in range(i):
                acc -= L[i, p] * out[p, c]
            out[i, c] = acc / L[i, i]


@njit(cache=True)
def _upper_solve(L, B, out):
    # out = L^{-T} B
    n, m = B.shape
    for c in range(m):
        for i in range(n - 1, -1, -1):
            acc = B[i, c]
            for p in range(i + 1, n):
                acc -= L[p, i] * out[p, c]
            out[i, c] = acc / L[i, i]


@njit(cache=True)
def _forward_kernel(diag, sub, r, d, s, chol):
    N, n, _ = diag.shape
    m = r.shape[2]
    W = np.empty((n, n))
    V = np.empty((n, m))
    d[0] = diag[0]
    s[0] = r[0]
    if not _chol_inplace(d[0], chol[0]):
        return 0
    for k in range(1, N):
        # W = L^{-1} a_k^T, V = L^{-1} s_{k-1}
        _lower_solve(chol[k - 1], sub[k - 1].T, W)
        _lower_solve(chol[k - 1], s[k - 1], V)
        for i in range(n):
            for j in range(n):
                acc = diag[k, i, j]
                for p in range(n):
                    acc -= W[p, i] * W[p, j]
                d[k, i, j] = acc
            for c in range(m):
                acc = r[k, i, c]
                for p in range(n):
                    acc -= W[p, i] * V[p, c]
                s[k, i, c] = acc
        if not _chol_inplace(d[k], chol[k]):
            return k
    return -1


@njit(cache=True)
def _backward_kernel(sub, s, chol, e):
    N, n, m = s.shape
    tmp = np.empty((n, m))
    rhs = np.empty((n, m))
    _lower_solve(chol[N - 1], s[N - 1], tmp)
    _upper_solve(chol[N - 1], tmp, e[N - 1])
    for k in range(N - 2, -1, -1):
        # rhs = s_k - a_{k+1}^T e_{k+1}
        for i in range(n):
            for c in range(m):
                acc = s[k, i, c]
                for p in range(n):
                    acc -= sub[k, p, i] * e[k + 1, p, c]
                rhs[i, c] = acc
        _lower_solve(chol[k], rhs, tmp)
        _upper_solve(chol[k], tmp, e[k])


def forward(A, r):
    """Forward elimination: d_0 = c_0, s_0 = r_0, then for k >= 1
    d_k = c_k - a_k d_{k-1}^{-1} a_k^T and s_k = r_k - a_k d_{k-1}^{-1} s_{k-1}.

    After this sweep the system is block upper-bidiagonal with diagonal d_k
    and super-diagonal a_{k+1}^T.  Every d_{k-1}^{-1} application is a pair
    of triangular solves with its Cholesky factor.
    """
    r = _check_rhs(A, r)
    vector = r.ndim == 2
    r3 = np.ascontiguousarray(r[..., None] if vector else r)
    d = np.empty_like(A.diag)
    s = np.empty_like(r3)
    chol = np.zeros_like(A.diag)
    bad = _forward_kernel(A.diag, A.sub, r3, d, s, chol)
    if bad >= 0:
        raise NotPositiveDefinite(
            f"eliminated diagonal block at time index {bad} is not positive definite", block=bad
        )
    return ForwardFactor(d=d, s=s[..., 0] if vector else s, chol=chol)


def back_substitute(A, F):
    """Back substitution: e_{N-1} = d^{-1} s, e_k = d_k^{-1}(s_k - a_{k+1}^T e_{k+1})."""
    vector = F.s.ndim == 2
    s3 = np.ascontiguousarray(F.s[..., None] if vector else F.s)
    e = np.empty_like(s3)
    _backward_kernel(A.sub, s3, F.chol, e)
    return e[..., 0] if vector else e


def solve(A, r):
    """Solve ``A e = r`` for SPD block-tridiagonal ``A``.

    Returns
    -------
    e : array shaped like ``r``
    F : ForwardFactor
        The eliminated blocks, which double as information-filter quantities
        when ``A`` comes from a Kalman smoothing problem.

    Raises
    ------
    NotPositiveDefinite
        With ``.block`` set to the first time index whose eliminated block
        has no Cholesky factor.
    """
    F = forward(A, r)
    return back_substitute(A, F), F


def multiply(A, x):
    """Block-tridiagonal product ``A x`` in O(n^2 N)."""
    x = _check_rhs(A, x)
    y = np.einsum("kij,kj...->ki...", A.diag, x)
    if A.N > 1:
        y[1:] += np.einsum("kij,kj...->ki...", A.sub, x[:-1])
        y[:-1] += np.einsum("kji,kj...->ki...", A.sub, x[1:])
    return y


class BlockDiagonal:
    """Block-diagonal operator with per-step blocks of shape ``(m_k, n)``.

    Maps a trajectory ``(N, n)`` to a flat vector of length ``sum(m_k)``;
    blocks may have zero rows.
    """

    def __init__(self, blocks, n):
        self.n = n
        self.blocks = [np.asarray(Bk, dtype=float).reshape(-1, n) for Bk in blocks]
        self.sizes = [Bk.shape[0] for Bk in self.blocks]
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)]).astype(int)
        # zero-padded stack (N, m_max, n) plus the mask of real rows
        mmax = max(self.sizes, default=0)
        self._padded = np.zeros((len(self.blocks), mmax, n))
        self._mask = np.zeros((len(self.blocks), mmax), dtype=bool)
        for k, Bk in enumerate(self.blocks):
            self._padded[k, :Bk.shape[0]] = Bk
            self._mask[k, :Bk.shape[0]] = True

    @property
    def N(self):
        return len(self.blocks)

    @property
    def size(self):
        return int(self.offsets[-1])

    def part(self, v, k):
        return v[self.offsets[k]:self.offsets[k + 1]]

    def _pad(self, v):
        out = np.zeros(self._mask.shape)
        out[self._mask] = v
        return out

    def apply(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.N, self.n):
            raise ShapeMismatch(f"trajectory must be {(self.N, self.n)}, got {x.shape}")
        return np.einsum("kmn,kn->km", self._padded, x)[self._mask]

    def apply_t(self, v):
        return np.einsum("kmn,km->kn", self._padded, self._pad(v))

    def gram_blocks(self, weights):
        """Diagonal blocks of ``B' diag(weights) B``, shape ``(N, n, n)``."""
        P = self._padded
        return np.einsum("kmi,km,kmj->kij", P, self._pad(weights), P)

    def dense(self):
        M = np.zeros((self.size, self.N * self.n))
        for k, Bk in enumerate(self.blocks):
            M[self.offsets[k]:self.offsets[k + 1], k * self.n:(k + 1) * self.n] = Bk
        return M


def assemble_dense(A):
    """Dense ``(nN, nN)`` copy of ``A``; intended for tests and small problems."""
    N, n = A.N, A.n
    M = np.zeros((N * n, N * n))
    for k in range(N):
        M[k * n:(k + 1) * n, k * n:(k + 1) * n] = A.diag[k]
    for k in range(1, N):
        M[k * n:(k + 1) * n, (k - 1) * n:k * n] = A.sub[k - 1]
        M[(k - 1) * n:k * n, k * n:(k + 1) * n] = A.sub[k - 1].T
    return M


def from_dense(M, n):
    """Extract the block-tridiagonal part of a dense symmetric matrix."""
    M = np.asarray(M, dtype=float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] % n:
        raise ShapeMismatch(f"cannot split {M.shape} into {n}x{n} blocks")
    N = M.shape[0] // n
    diag = np.stack([M[k * n:(k + 1) * n, k * n:(k + 1) * n] for k in range(N)])
    sub = np.stack([M[k * n:(k + 1) * n, (k - 1) * n:k * n] for k in range(1, N)]) if N > 1 else np.zeros((0, n, n))
    return BlockTriMatrix(diag, sub)
