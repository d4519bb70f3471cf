"""Quasidefinite KKT matrix and its static permuted LDL^T factorization.

The factorization follows the classic up-looking scheme: an elimination tree
gives column counts, then each row of ``L`` is computed by a sparse triangular
solve. No pivoting is done; quasidefinite matrices factor stably in any
symmetric order.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np
import scipy.sparse as sp

from ..exceptions import DimensionError, FactorizationError
from .ordering import symbolic_order


def as_csc(A) -> sp.csc_matrix:
    """Canonical CSC copy: float64, sorted indices, explicit zeros dropped."""
    A = sp.csc_matrix(A, dtype=float, copy=True)
    A.sum_duplicates()
    A.eliminate_zeros()
    A.sort_indices()
    return A


def build_kkt(A) -> sp.csc_matrix:
    """Return ``S = [[I, -A^T], [-A, -I]]`` for an ``m x n`` matrix ``A``.

    The pattern of ``A`` is kept as stored, so explicit zeros in ``A`` stay
    structural entries of ``S``.
    """
    A = sp.csc_matrix(A, dtype=float)
    m, n = A.shape
    S = sp.bmat(
        [[sp.identity(n, format="csc"), -A.T], [-A, -sp.identity(m, format="csc")]],
        format="csc",
    )
    S.sort_indices()
    return S


@numba.njit(cache=True)
def _etree(n, Ap, Ai):
    parent = np.full(n, -1, dtype=np.int64)
    flag = np.empty(n, dtype=np.int64)
    lnz = np.zeros(n, dtype=np.int64)
    for k in range(n):
        flag[k] = k
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            if i < k:
                while flag[i] != k:
                    if parent[i] == -1:
                        parent[i] = k
                    lnz[i] += 1
                    flag[i] = k
                    i = parent[i]
    return parent, lnz


@numba.njit(cache=True)
def _ldl_numeric(n, Ap, Ai, Ax, Lp, parent):
    Li = np.empty(Lp[n], dtype=np.int64)
    Lx = np.empty(Lp[n], dtype=np.float64)
    D = np.empty(n, dtype=np.float64)
    Y = np.zeros(n, dtype=np.float64)
    pattern = np.empty(n, dtype=np.int64)
    flag = np.empty(n, dtype=np.int64)
    lnz = np.zeros(n, dtype=np.int64)
    for k in range(n):
        top = n
        flag[k] = k
        for p in range(Ap[k], Ap[k + 1]):
            i = Ai[p]
            if i > k:
                continue
            Y[i] += Ax[p]
            length = 0
            while flag[i] != k:
                pattern[length] = i
                length += 1
                flag[i] = k
                i = parent[i]
            while length > 0:
                top -= 1
                length -= 1
                pattern[top] = pattern[length]
        D[k] = Y[k]
        Y[k] = 0.0
        while top < n:
            i = pattern[top]
            top += 1
            yi = Y[i]
            Y[i] = 0.0
            p2 = Lp[i] + lnz[i]
            for p in range(Lp[i], p2):
                Y[Li[p]] -= Lx[p] * yi
            lki = yi / D[i]
            D[k] -= lki * yi
            Li[p2] = k
            Lx[p2] = lki
            lnz[i] += 1
        if D[k] == 0.0 or not np.isfinite(D[k]):
            return Li, Lx, D, k
    return Li, Lx, D, -1


@numba.njit(cache=True)
def _ldl_solve_inplace(Lp, Li, Lx, D, x):
    n = D.shape[0]
    for j in range(n):
        xj = x[j]
        for p in range(Lp[j], Lp[j + 1]):
            x[Li[p]] -= Lx[p] * xj
    for j in range(n):
        x[j] /= D[j]
    for j in range(n - 1, -1, -1):
        acc = x[j]
        for p in range(Lp[j], Lp[j + 1]):
            acc -= Lx[p] * x[Li[p]]
        x[j] = acc


@numba.njit(cache=True)
def _permuted_solve_work(perm, Lp, Li, Lx, D, rhs, out, work):
    n = perm.shape[0]
    for i in range(n):
        work[i] = rhs[perm[i]]
    _ldl_solve_inplace(Lp, Li, Lx, D, work)
    for i in range(n):
        out[perm[i]] = work[i]


@numba.njit(cache=True)
def _permuted_solve(perm, Lp, Li, Lx, D, rhs, out):
    _permuted_solve_work(perm, Lp, Li, Lx, D, rhs, out, np.empty(perm.shape[0]))


@dataclass(frozen=True)
class KktFactorization:
    """``S = P L D L^T P^T`` with ``P[perm[i], i] = 1`` and unit-lower ``L``.

    ``Lp, Li, Lx`` hold the strictly lower part of ``L`` column-wise.
    """

    perm: np.ndarray
    iperm: np.ndarray
    Lp: np.ndarray
    Li: np.ndarray
    Lx: np.ndarray
    D: np.ndarray
    S: sp.csc_matrix = field(repr=False)

    @property
    def dim(self) -> int:
        return self.D.shape[0]

    @property
    def L(self) -> sp.csc_matrix:
        d = self.dim
        strict = sp.csc_matrix((self.Lx, self.Li, self.Lp), shape=(d, d))
        return (strict + sp.identity(d, format="csc")).tocsc()

    @property
    def P(self) -> sp.csc_matrix:
        d = self.dim
        return sp.csc_matrix((np.ones(d), (self.perm, np.arange(d))), shape=(d, d))

    def inertia(self) -> tuple[int, int]:
        """Counts of positive and negative pivots."""
        return int(np.sum(self.D > 0)), int(np.sum(self.D < 0))

    def reconstruct(self) -> sp.csc_matrix:
        L, P = self.L, self.P
        return (P @ L @ sp.diags(self.D) @ L.T @ P.T).tocsc()


def ldl_factor(S, perm=None) -> KktFactorization:
    """Factor a symmetric quasidefinite ``S`` in the order ``perm``.

    ``perm=None`` computes a minimum-degree order from the pattern. Raises
    :class:`FactorizationError` on a zero or non-finite pivot.
    """
    S = sp.csc_matrix(S, dtype=float)
    d = S.shape[0]
    if S.shape != (d, d):
        raise DimensionError("KKT matrix must be square")
    if perm is None:
        perm = symbolic_order(S)
    perm = np.asarray(perm, dtype=np.int64)
    if perm.shape != (d,) or not np.array_equal(np.sort(perm), np.arange(d)):
        raise DimensionError("perm is not a permutation of the matrix dimension")
    iperm = np.empty_like(perm)
    iperm[perm] = np.arange(d)
    C = sp.triu(S[perm][:, perm], format="csc")
    C.sort_indices()
    Ap = C.indptr.astype(np.int64)
    Ai = C.indices.astype(np.int64)
    Ax = C.data.astype(np.float64)
    if not np.all(np.isfinite(Ax)):
        raise FactorizationError("KKT matrix has non-finite entries")
    parent, lnz = _etree(d, Ap, Ai)
    Lp = np.zeros(d + 1, dtype=np.int64)
    np.cumsum(lnz, out=Lp[1:])
    Li, Lx, D, bad = _ldl_numeric(d, Ap, Ai, Ax, Lp, parent)
    if bad >= 0:
        raise FactorizationError(
            f"pivot {bad} (original index {perm[bad]}) is zero or non-finite; "
            "matrix is not quasidefinite"
        )
    return KktFactorization(perm, iperm, Lp, Li, Lx, D, S)


def ldl_solve(f: KktFactorization, rhs, refine: bool = False) -> np.ndarray:
    """Solve ``S x = rhs`` with a cached factorization.

    ``refine=True`` adds one step of iterative refinement against ``f.S``.
    """
    rhs = np.ascontiguousarray(rhs, dtype=float)
    if rhs.shape != (f.dim,):
        raise DimensionError(f"rhs has shape {rhs.shape}, expected ({f.dim},)")
    x = np.empty_like(rhs)
    _permuted_solve(f.perm, f.Lp, f.Li, f.Lx, f.D, rhs, x)
    if refine:
        r = rhs - f.S @ x
        dx = np.empty_like(rhs)
        _permuted_solve(f.perm, f.Lp, f.Li, f.Lx, f.D, r, dx)
        x += dx
    return x


def dense_ldl(S):
    """Unpivoted dense ``LDL^T`` in the natural order (small test oracle)."""
    S = np.array(S.toarray() if sp.issparse(S) else S, dtype=float)
    d = S.shape[0]
    if d > 64:
        raise ValueError("dense_ldl is meant for d <= 64")
    L = np.eye(d)
    D = np.zeros(d)
    for j in range(d):
        D[j] = S[j, j] - np.sum(L[j, :j] ** 2 * D[:j])
        for i in range(j + 1, d):
            L[i, j] = (S[i, j] - np.sum(L[i, :j] * L[j, :j] * D[:j])) / D[j]
    return L, D
