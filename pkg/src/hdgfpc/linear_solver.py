"""Sparse SPD solvers for the global trace system.

The direct path is an up-looking sparse Cholesky factorization (the
row-by-row algorithm of CSparse's ``cs_chol``) preceded by a minimum degree
ordering computed on the supervariable-compressed graph.  A Jacobi
preconditioned conjugate gradient method serves as fallback when the
predicted factor is too large.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass

import numba
import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class NotPositiveDefiniteError(SolverError):
    pass


@dataclass(frozen=True)
class SolverOptions:
    method: str = "auto"             # "auto" | "cholesky" | "cg"
    rtol: float = 1e-10              # required relative residual
    symmetry_tol: float = 1e-10
    max_factor_nnz: int = 50_000_000  # auto switches to CG above this
    cg_iteration_factor: int = 50    # max CG iterations = factor * sqrt(N)
    refinement_steps: int = 3

    def __post_init__(self):
        if self.method not in ("auto", "cholesky", "cg"):
            raise ValueError(f"unknown solver method {self.method!r}")


@dataclass(frozen=True)
class SolveResult:
    x: np.ndarray
    method: str
    relative_residual: float
    iterations: int
    fallback_used: bool
    factor_nnz: int


# ---------------------------------------------------------------------------
# Ordering


def minimum_degree_ordering(A: sp.spmatrix) -> np.ndarray:
    """Minimum degree ordering of a structurally symmetric matrix.

    Rows with identical sparsity pattern (supervariables) are merged first;
    the elimination graph of the compressed graph is then tracked explicitly,
    with degrees weighted by supervariable size.  Ties go to the lowest
    index, so the result is deterministic.
    """
    A = sp.csr_matrix(A)
    n = A.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    indptr, indices = A.indptr, A.indices

    groups = {}
    group_of = np.empty(n, dtype=np.int64)
    members = []
    for i in range(n):
        row = indices[indptr[i]:indptr[i + 1]]
        key = tuple(np.union1d(row, [i]).tolist())
        g = groups.get(key)
        if g is None:
            g = len(members)
            groups[key] = g
            members.append([i])
        else:
            members[g].append(i)
        group_of[i] = g

    G = len(members)
    weight = [len(m) for m in members]
    adj = []
    for g in range(G):
        rep = members[g][0]
        nbrs = set(group_of[indices[indptr[rep]:indptr[rep + 1]]].tolist())
        nbrs.discard(g)
        adj.append(nbrs)

    w = weight.__getitem__
    degree = [sum(map(w, a)) for a in adj]
    heap = [(degree[g], g) for g in range(G)]
    heapq.heapify(heap)
    done = bytearray(G)
    order = []
    while heap:
        d, g = heapq.heappop(heap)
        if done[g] or d != degree[g]:
            continue
        done[g] = 1
        order.append(g)
        nbrs = adj[g]
        for u in nbrs:
            au = adj[u]
            au |= nbrs
            au.discard(u)
            au.discard(g)
            degree[u] = sum(map(w, au))
            heapq.heappush(heap, (degree[u], u))
        adj[g] = None

    perm = np.fromiter((i for g in order for i in members[g]), dtype=np.int64, count=n)
    return perm


# ---------------------------------------------------------------------------
# Numeric kernels


@numba.njit(cache=True)
def _etree(n, Cp, Ci):
    parent = np.full(n, -1, dtype=np.int64)
    ancestor = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        for p in range(Cp[k], Cp[k + 1]):
            i = Ci[p]
            while i != -1 and i < k:
                inext = ancestor[i]
                ancestor[i] = k
                if inext == -1:
                    parent[i] = k
                i = inext
    return parent


@numba.njit(cache=True)
def _ereach(Cp, Ci, k, parent, s, w):
    """Pattern of row k of L, written to s[top:n] in topological order."""
    n = parent.shape[0]
    top = n
    w[k] = k
    for p in range(Cp[k], Cp[k + 1]):
        i = Ci[p]
        if i > k:
            continue
        length = 0
        while w[i] != k:
            s[length] = i
            length += 1
            w[i] = k
            i = parent[i]
        while length > 0:
            top -= 1
            length -= 1
            s[top] = s[length]
    return top


@numba.njit(cache=True)
def _column_counts(n, Cp, Ci, parent):
    counts = np.ones(n, dtype=np.int64)
    s = np.empty(n, dtype=np.int64)
    w = np.full(n, -1, dtype=np.int64)
    for k in range(n):
        top = _ereach(Cp, Ci, k, parent, s, w)
        for t in range(top, n):
            counts[s[t]] += 1
    return counts


@numba.njit(cache=True)
def _cholesky_numeric(n, Cp, Ci, Cx, parent, Lp):
    nnz = Lp[n]
    Li = np.empty(nnz, dtype=np.int64)
    Lx = np.empty(nnz, dtype=np.float64)
    c = Lp[:n].copy()
    s = np.empty(n, dtype=np.int64)
    w = np.full(n, -1, dtype=np.int64)
    x = np.zeros(n, dtype=np.float64)
    for k in range(n):
        top = _ereach(Cp, Ci, k, parent, s, w)
        x[k] = 0.0
        for p in range(Cp[k], Cp[k + 1]):
            if Ci[p] <= k:
                x[Ci[p]] = Cx[p]
        d = x[k]
        x[k] = 0.0
        for t in range(top, n):
            i = s[t]
            lki = x[i] / Lx[Lp[i]]
            x[i] = 0.0
            for p in range(Lp[i] + 1, c[i]):
                x[Li[p]] -= Lx[p] * lki
            d -= lki * lki
            p = c[i]
            c[i] += 1
            Li[p] = k
            Lx[p] = lki
        if not d > 0.0:
            return Li, Lx, k, d
        p = c[k]
        c[k] += 1
        Li[p] = k
        Lx[p] = math.sqrt(d)
    return Li, Lx, -1, 0.0


@numba.njit(cache=True)
def _lower_solve(n, Lp, Li, Lx, x):
    for j in range(n):
        x[j] /= Lx[Lp[j]]
        xj = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            x[Li[p]] -= Lx[p] * xj


@numba.njit(cache=True)
def _upper_solve(n, Lp, Li, Lx, x):
    for j in range(n - 1, -1, -1):
        acc = x[j]
        for p in range(Lp[j] + 1, Lp[j + 1]):
            acc -= Lx[p] * x[Li[p]]
        x[j] = acc / Lx[Lp[j]]


class SparseCholesky:
    """A = P^T L L^T P for a sparse symmetric positive definite A.

    Construction performs the ordering and symbolic analysis only; call
    :meth:`factorize` before :meth:`solve`.
    """

    def __init__(self, A: sp.spmatrix, ordering: str = "mindeg"):
        A = sp.csr_matrix(A)
        if A.shape[0] != A.shape[1]:
            raise SolverError("matrix must be square")
        self.n = A.shape[0]
        if ordering == "mindeg":
            self.perm = minimum_degree_ordering(A)
        elif ordering == "natural":
            self.perm = np.arange(self.n, dtype=np.int64)
        else:
            raise ValueError(f"unknown ordering {ordering!r}")
        self._C = self._permuted_upper(A)
        Cp, Ci = self._C.indptr.astype(np.int64), self._C.indices.astype(np.int64)
        self.parent = _etree(self.n, Cp, Ci)
        counts = _column_counts(self.n, Cp, Ci, self.parent)
        self.Lp = np.concatenate(([0], np.cumsum(counts))).astype(np.int64)
        self.Li = None
        self.Lx = None

    def _permuted_upper(self, A):
        Ap = A[self.perm][:, self.perm]
        C = sp.triu(Ap, format="csc")
        C.sort_indices()
        return C

    @property
    def factor_nnz(self) -> int:
        return int(self.Lp[-1])

    def factorize(self, A: sp.spmatrix | None = None) -> "SparseCholesky":
        C = self._C if A is None else self._permuted_upper(sp.csr_matrix(A))
        Li, Lx, fail, pivot = _cholesky_numeric(
            self.n, C.indptr.astype(np.int64), C.indices.astype(np.int64),
            C.data.astype(np.float64), self.parent, self.Lp)
        if fail >= 0:
            raise NotPositiveDefiniteError(
                f"non-positive pivot {pivot:.3e} at elimination step {fail}")
        self.Li, self.Lx = Li, Lx
        return self

    def solve(self, b: np.ndarray) -> np.ndarray:
        if self.Lx is None:
            raise SolverError("factorize() must be called before solve()")
        b = np.asarray(b, dtype=np.float64)
        y = b[self.perm].copy()
        _lower_solve(self.n, self.Lp, self.Li, self.Lx, y)
        _upper_solve(self.n, self.Lp, self.Li, self.Lx, y)
        x = np.empty_like(y)
        x[self.perm] = y
        return x

    def lower_factor(self) -> sp.csc_matrix:
        """L of the permuted matrix, mainly for inspection."""
        return sp.csc_matrix((self.Lx, self.Li, self.Lp), shape=(self.n, self.n))


# ---------------------------------------------------------------------------


def conjugate_gradient(A: sp.spmatrix, b: np.ndarray, rtol: float = 1e-10,
                       maxiter: int | None = None):
    """Jacobi preconditioned CG.  Returns (x, iterations, relative residual)."""
    A = sp.csr_matrix(A)
    n = A.shape[0]
    if maxiter is None:
        maxiter = max(1, int(50 * math.sqrt(n)))
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise NotPositiveDefiniteError("non-positive diagonal entry")
    inv_diag = 1.0 / diag
    bnorm = np.linalg.norm(b)
    x = np.zeros(n)
    if bnorm == 0.0:
        return x, 0, 0.0
    r = b.copy()
    z = inv_diag * r
    p = z.copy()
    rz = r @ z
    for it in range(1, maxiter + 1):
        Ap = A @ p
        pAp = p @ Ap
        if not pAp > 0.0:
            raise NotPositiveDefiniteError("CG breakdown: non-positive curvature")
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        res = np.linalg.norm(r) / bnorm
        if res <= rtol:
            return x, it, res
        z = inv_diag * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, maxiter, np.linalg.norm(b - A @ x) / bnorm


def _as_matrix_rhs(system, rhs):
    if rhs is None:
        return sp.csr_matrix(system.matrix), np.asarray(system.rhs, dtype=float)
    return sp.csr_matrix(system), np.asarray(rhs, dtype=float)


def check_symmetric(A: sp.spmatrix, tol: float = 1e-10) -> float:
    amax = abs(A).max() if A.nnz else 0.0
    if amax == 0:
        return 0.0
    err = abs(A - A.T).max() / amax
    if err > tol:
        raise SolverError(f"matrix is not symmetric: relative asymmetry {err:.3e}")
    return float(err)


def _relative_residual(A, x, b):
    bnorm = np.linalg.norm(b)
    r = np.linalg.norm(b - A @ x)
    return float(r / bnorm) if bnorm > 0 else float(r)


def solve_spd(system, rhs=None, options: SolverOptions | None = None,
              factor: SparseCholesky | None = None):
    """Solve A x = b for symmetric positive definite A.

    `system` is either a :class:`~hdgfpc.hdg_assembly.GlobalTraceSystem` or a
    sparse matrix (then `rhs` is required).  Returns ``(SolveResult,
    SparseCholesky | None)``; the factor is reusable, e.g. for
    :func:`condition_estimate`.
    """
    opts = options or SolverOptions()
    A, b = _as_matrix_rhs(system, rhs)
    check_symmetric(A, opts.symmetry_tol)
    n = A.shape[0]
    if n == 0:
        return SolveResult(np.zeros(0), "cholesky", 0.0, 0, False, 0), None

    use_cg = opts.method == "cg"
    fallback = False
    if not use_cg and factor is None:
        factor = SparseCholesky(A)
        if opts.method == "auto" and factor.factor_nnz > opts.max_factor_nnz:
            logger.info("factor would hold %d nonzeros; switching to CG", factor.factor_nnz)
            use_cg, fallback, factor = True, True, None
        else:
            factor.factorize(A)

    if use_cg:
        maxiter = max(1, int(opts.cg_iteration_factor * math.sqrt(n)))
        x, its, res = conjugate_gradient(A, b, opts.rtol, maxiter)
        if res > opts.rtol:
            raise SolverError(f"CG did not converge in {its} iterations (residual {res:.3e})")
        return SolveResult(x, "cg", res, its, fallback, 0), None

    x = factor.solve(b)
    res = _relative_residual(A, x, b)
    steps = 0
    while res > 0.01 * opts.rtol and steps < opts.refinement_steps:
        x = x + factor.solve(b - A @ x)
        res = _relative_residual(A, x, b)
        steps += 1
    if res > opts.rtol:
        raise SolverError(f"Cholesky solve residual {res:.3e} exceeds {opts.rtol:.1e}")
    return SolveResult(x, "cholesky", res, steps, False, factor.factor_nnz), factor


# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConditionEstimate:
    kappa: float
    lambda_max: float
    lambda_min: float
    converged: bool
    iterations: tuple


def _rayleigh_iterations(apply, A, x, tol, maxiter):
    """Iterate x <- apply(x); return the Rayleigh quotient of A, iterations and
    a convergence flag (residual bound or stagnation)."""
    x = x / np.linalg.norm(x)
    rho_old = None
    for it in range(1, maxiter + 1):
        y = apply(x)
        x = y / np.linalg.norm(y)
        Ax = A @ x
        rho = float(x @ Ax)
        if np.linalg.norm(Ax - rho * x) <= tol * abs(rho):
            return rho, it, True
        if rho_old is not None and abs(rho - rho_old) <= 1e-3 * tol * abs(rho):
            return rho, it, True
        rho_old = rho
    return rho, maxiter, False


def condition_estimate(system, factor: SparseCholesky | None = None, tol: float = 1e-3,
                       max_power_iterations: int = 20000,
                       max_inverse_iterations: int = 500) -> ConditionEstimate:
    """Spectral condition number by power iteration (largest eigenvalue) and
    inverse iteration with the Cholesky factor (smallest eigenvalue)."""
    A = sp.csr_matrix(system.matrix if hasattr(system, "matrix") else system)
    if factor is None:
        factor = SparseCholesky(A).factorize(A)
    rng = np.random.default_rng(12345)
    x0 = rng.standard_normal(A.shape[0])
    lmax, it_max, ok_max = _rayleigh_iterations(lambda v: A @ v, A, x0, tol,
                                                max_power_iterations)
    lmin, it_min, ok_min = _rayleigh_iterations(factor.solve, A, x0, tol,
                                                max_inverse_iterations)
    if not (ok_max and ok_min):
        logger.warning("condition estimate did not converge (power %s, inverse %s)",
                       ok_max, ok_min)
    return ConditionEstimate(lmax / lmin, lmax, lmin, ok_max and ok_min, (it_max, it_min))
