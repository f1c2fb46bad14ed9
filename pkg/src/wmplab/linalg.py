"""Row-compressed sparse matrices, Jacobi-preconditioned conjugate gradients
with batched right-hand sides, and a dense LU oracle.

Determinism: every column of a batch is iterated with exactly the same
floating point operations as a single-column solve, so results do not depend
on batch size, batch order or thread count.  Blocks are kept in Fortran order
so each column is contiguous and its reductions use the same summation order
as a 1-D vector.
"""
from __future__ import annotations

import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .errors import ConvergenceError, NotSPDError, SingularMatrixError

log = logging.getLogger(__name__)

DENSE_LIMIT = 2000


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    """Square CSR matrix with sorted, unique column indices per row."""

    n: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    symmetric: bool = False
    _csr: sp.csr_matrix = field(default=None, repr=False)

    @classmethod
    def from_scipy(cls, a, symmetric=False) -> "SparseMatrix":
        csr = sp.csr_matrix(a, dtype=float)
        csr.sum_duplicates()
        csr.sort_indices()
        if csr.shape[0] != csr.shape[1] and symmetric:
            raise ValueError("a symmetric matrix must be square")
        return cls(csr.shape[0], csr.indptr, csr.indices, csr.data, symmetric, csr)

    @classmethod
    def from_dense(cls, a, symmetric=False) -> "SparseMatrix":
        return cls.from_scipy(sp.csr_matrix(np.asarray(a, dtype=float)), symmetric)

    def __post_init__(self):
        if self._csr is None:
            csr = sp.csr_matrix((self.values, self.col_indices, self.row_offsets), shape=(self.n, self.n))
            object.__setattr__(self, "_csr", csr)
        for a in (self.row_offsets, self.col_indices, self.values):
            a.setflags(write=False)

    @property
    def csr(self) -> sp.csr_matrix:
        return self._csr

    @property
    def shape(self):
        return self._csr.shape

    @property
    def nnz(self):
        return len(self.values)

    def diagonal(self):
        return self._csr.diagonal()

    def to_dense(self):
        return self._csr.toarray()

    def submatrix(self, rows, cols, symmetric=False) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self._csr[rows][:, cols], symmetric)

    def transpose(self) -> "SparseMatrix":
        return SparseMatrix.from_scipy(self._csr.T, self.symmetric)

    def __matmul__(self, x):
        return spmv(self, x)

    def export_coo(self, path) -> None:
        """Write ``i j value`` lines, one per stored entry."""
        coo = self._csr.tocoo()
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"# {self.shape[0]} {self.shape[1]} {self.nnz}\n")
            for i, j, v in zip(coo.row, coo.col, coo.data):
                fh.write(f"{int(i)} {int(j)} {float(v)!r}\n")


def spmv(A: SparseMatrix, x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    if x.shape[0] != A.shape[1]:
        raise ValueError(f"dimension mismatch: matrix {A.shape}, vector {x.shape}")
    return A.csr @ x


@dataclass
class SolveStats:
    iterations: int
    final_relative_residual: float
    wall_time: float
    converged: bool = True


def _colnorm(X):
    return np.sqrt(_coldot(X, X))


def _coldot(X, Y):
    # X, Y Fortran-ordered (n, k); one contiguous pairwise sum per column
    return np.multiply(X, Y, order="F").sum(axis=0)


def _block_cg(A, B, tol, maxit, dinv, restarts=3):
    """CG on every column of ``B`` independently; returns (X, its, relres, ok)."""
    csr = A.csr
    n, k = B.shape
    B = np.asfortranarray(B)
    bnorm = _colnorm(B)
    X = np.zeros((n, k), order="F")
    its = np.zeros(k, dtype=np.int64)
    relres = np.zeros(k)
    ok = np.ones(k, dtype=bool)
    nonzero = np.flatnonzero(bnorm > 0)
    if not len(nonzero):
        return X, its, relres, ok
    # each restart recomputes the true residual of the unconverged columns
    todo = nonzero
    for attempt in range(restarts + 1):
        if not len(todo):
            break
        R = np.asfortranarray(B[:, todo] - csr @ X[:, todo]) if attempt else B[:, todo].copy(order="F")
        bn = bnorm[todo]
        res = _colnorm(R) / bn
        active = np.flatnonzero(res > tol)
        relres[todo] = res
        if not len(active):
            break
        cols = todo[active]
        Xa = np.asfortranarray(X[:, cols])
        R = np.asfortranarray(R[:, active])
        bn = bn[active]
        best_x, best_r = Xa.copy(order="F"), res[active].copy()
        Z = np.asfortranarray(dinv[:, None] * R)
        P = Z.copy(order="F")
        rz = _coldot(R, Z)
        it = np.zeros(len(cols), dtype=np.int64)
        while len(cols):
            AP = np.asfortranarray(csr @ P)
            pap = _coldot(P, AP)
            if (pap <= 0).any():
                j = int(cols[np.flatnonzero(pap <= 0)[0]])
                raise NotSPDError(f"non-positive curvature p^T A p = {pap.min():.3e} in column {j}; "
                                  "matrix is not symmetric positive definite")
            alpha = rz / pap
            Xa += alpha * P
            R -= alpha * AP
            it += 1
            res = _colnorm(R) / bn
            better = res < best_r
            if better.any():
                best_r[better] = res[better]
                best_x[:, better] = Xa[:, better]
            done = (res <= tol) | (its[cols] + it >= maxit)
            if done.any():
                d = np.flatnonzero(done)
                X[:, cols[d]] = np.where(res[d] <= tol, Xa[:, d], best_x[:, d])
                its[cols[d]] += it[d]
                relres[cols[d]] = np.minimum(res[d], best_r[d])
                keep = np.flatnonzero(~done)
                cols, Xa, R, P, Z = cols[keep], Xa[:, keep], R[:, keep], P[:, keep], Z[:, keep]
                rz, bn, it = rz[keep], bn[keep], it[keep]
                best_x, best_r = best_x[:, keep], best_r[keep]
                Xa, R, P = (np.asfortranarray(a) for a in (Xa, R, P))
                best_x = np.asfortranarray(best_x)
                if not len(cols):
                    break
            Z = np.asfortranarray(dinv[:, None] * R)
            rz_new = _coldot(R, Z)
            beta = rz_new / rz
            rz = rz_new
            P = np.asfortranarray(Z + beta * P)
        # only columns that still have iterations left get a restart
        todo = nonzero[its[nonzero] < maxit]
    # final true residuals
    if len(nonzero):
        Rt = np.asfortranarray(B[:, nonzero] - csr @ X[:, nonzero])
        relres[nonzero] = _colnorm(Rt) / bnorm[nonzero]
        ok[nonzero] = relres[nonzero] <= tol
    return X, its, relres, ok


def _jacobi(A, precond):
    if precond in (None, "none"):
        return np.ones(A.shape[0])
    if precond != "jacobi":
        raise ValueError(f"unknown preconditioner {precond!r}")
    d = A.diagonal()
    if (d <= 0).any():
        raise NotSPDError("non-positive diagonal entry; matrix is not SPD")
    return 1.0 / d


def _check(A, tol):
    if not 0 < tol < 1:
        raise ValueError("tol must lie in (0, 1)")
    if A.shape[0] != A.shape[1]:
        raise ValueError("matrix must be square")


def cg_solve(A: SparseMatrix, b, tol=1e-12, maxit=None, precond="jacobi"):
    """Solve ``A x = b`` for SPD ``A`` to ``||b - A x|| <= tol ||b||``.

    On reaching ``maxit`` the best iterate is returned with
    ``stats.converged = False`` and a warning is issued.
    """
    _check(A, tol)
    b = np.asarray(b, dtype=float)
    if b.shape != (A.shape[0],):
        raise ValueError(f"dimension mismatch: matrix {A.shape}, rhs {b.shape}")
    maxit = maxit or 10 * A.shape[0] + 10
    t0 = time.perf_counter()
    X, its, relres, ok = _block_cg(A, b[:, None], tol, maxit, _jacobi(A, precond))
    stats = SolveStats(int(its[0]), float(relres[0]), time.perf_counter() - t0, bool(ok[0]))
    if not stats.converged:
        warnings.warn(f"CG stopped after {stats.iterations} iterations at relative residual "
                      f"{stats.final_relative_residual:.3e}", RuntimeWarning, stacklevel=2)
    return X[:, 0], stats


@dataclass
class MultiSolveStats:
    iterations: np.ndarray
    final_relative_residual: np.ndarray
    wall_time: float

    @property
    def max_iterations(self):
        return int(self.iterations.max(initial=0))

    @property
    def total_iterations(self):
        return int(self.iterations.sum())


def solve_multi(A: SparseMatrix, B, tol=1e-12, maxit=None, precond="jacobi", threads=1,
                chunk=None):
    """Solve ``A X = B`` column by column; returns ``(X, MultiSolveStats)``.

    Columns are processed in blocks of ``chunk`` (all at once by default),
    blocks run on ``threads`` workers.  Raises ConvergenceError naming the
    first failing column.
    """
    _check(A, tol)
    B = np.asarray(B, dtype=float)
    if B.ndim == 1:
        B = B[:, None]
    if B.shape[0] != A.shape[0]:
        raise ValueError(f"dimension mismatch: matrix {A.shape}, rhs {B.shape}")
    n, k = B.shape
    maxit = maxit or 10 * n + 10
    dinv = _jacobi(A, precond)
    threads = max(1, int(threads or 1))
    if chunk is None:
        chunk = -(-k // threads) if k else 1
    chunk = max(1, int(chunk))
    spans = [(s, min(k, s + chunk)) for s in range(0, k, chunk)]
    t0 = time.perf_counter()
    X = np.zeros((n, k), order="F")
    its = np.zeros(k, dtype=np.int64)
    relres = np.zeros(k)
    ok = np.ones(k, dtype=bool)

    def work(span):
        s, e = span
        return span, _block_cg(A, B[:, s:e], tol, maxit, dinv)

    if threads > 1 and len(spans) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, spans))
    else:
        results = [work(s) for s in spans]
    for (s, e), (x, i, r, o) in results:
        X[:, s:e], its[s:e], relres[s:e], ok[s:e] = x, i, r, o
    stats = MultiSolveStats(its, relres, time.perf_counter() - t0)
    if not ok.all():
        j = int(np.flatnonzero(~ok)[0])
        raise ConvergenceError(f"column {j} did not converge: relative residual {relres[j]:.3e} "
                               f"after {its[j]} iterations", x=X, stats=stats, column=j)
    log.debug("solve_multi: %d columns, max %d iterations", k, stats.max_iterations)
    return X, stats


def dense_solve(A, b):
    """LU with partial pivoting; oracle for systems of size <= 2000."""
    A = A.to_dense() if isinstance(A, SparseMatrix) else np.asarray(A, dtype=float)
    b = np.asarray(b, dtype=float)
    n = A.shape[0]
    if A.shape != (n, n):
        raise ValueError("matrix must be square")
    if n > DENSE_LIMIT:
        raise ValueError(f"dense oracle limited to n <= {DENSE_LIMIT}, got {n}")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", scipy.linalg.LinAlgWarning)
        lu, piv = scipy.linalg.lu_factor(A)
    d = np.abs(np.diag(lu))
    if n and d.min() <= n * np.finfo(float).eps * max(d.max(), np.abs(A).max()):
        raise SingularMatrixError("matrix is singular to machine precision")
    return scipy.linalg.lu_solve((lu, piv), b)
