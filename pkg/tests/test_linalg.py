from __future__ import annotations

import numpy as np
import pytest
import scipy.linalg
import scipy.sparse as sp
from hypothesis import given, strategies as st

from wmplab.assembly import assemble_stiffness, split_dofs
from wmplab.errors import ConvergenceError, NotSPDError, SingularMatrixError
from wmplab.fe import build_space
from wmplab.linalg import SparseMatrix, cg_solve, dense_solve, solve_multi, spmv
from wmplab.mesh import generate_structured


def _random_spd(n, seed=0):
    M = sp.random(n, n, density=0.05, random_state=seed)
    return SparseMatrix.from_scipy(M @ M.T + sp.eye(n), symmetric=True)


def _kII(n, r=1):
    return split_dofs(build_space(generate_structured("unit_cube", n), r))[0]


def test_spmv():
    I = SparseMatrix.from_scipy(sp.eye(5))
    x = np.arange(5.0)
    assert np.array_equal(spmv(I, x), x)
    K = assemble_stiffness(build_space(generate_structured("unit_cube", 3), 2))
    assert np.abs(spmv(K, np.ones(K.n))).max() <= 1e-12
    A = _random_spd(50)
    y = np.random.default_rng(0).normal(size=50)
    assert np.abs(spmv(A, y) - A.to_dense() @ y).max() <= 1e-13
    with pytest.raises(ValueError):
        spmv(A, np.ones(49))


def test_csr_layout_invariants():
    A = _random_spd(40)
    for i in range(A.n):
        row = A.col_indices[A.row_offsets[i]:A.row_offsets[i + 1]]
        assert (np.diff(row) > 0).all()
    D = A.to_dense()
    assert np.array_equal(D != 0, (D != 0).T)


def test_cg_zero_rhs():
    x, st_ = cg_solve(_random_spd(20), np.zeros(20))
    assert (x == 0).all() and st_.iterations == 0 and st_.converged


def test_cg_diagonal():
    A = SparseMatrix.from_scipy(sp.diags(np.arange(1, 11.0)))
    for pre in ("none", "jacobi"):
        x, st_ = cg_solve(A, np.ones(10), precond=pre)
        assert np.allclose(x, 1 / np.arange(1, 11), rtol=1e-12)
        assert st_.iterations <= 10


@pytest.mark.parametrize("n,r", [(4, 1), (3, 2)])
def test_cg_matches_dense_lu(n, r):
    A = _kII(n, r)
    b = np.random.default_rng(1).normal(size=A.n)
    x, st_ = cg_solve(A, b, tol=1e-12)
    ref = dense_solve(A, b)
    assert np.abs(x - ref).max() / np.abs(ref).max() <= 1e-8
    assert st_.final_relative_residual <= 1e-12
    assert np.linalg.norm(b - A.to_dense() @ x) <= 1e-12 * np.linalg.norm(b)


def test_cg_not_spd():
    A = SparseMatrix.from_dense(np.diag([1.0, -1.0, 2.0]))
    with pytest.raises(NotSPDError):
        cg_solve(A, np.ones(3), precond="none")
    with pytest.raises(NotSPDError):
        cg_solve(A, np.ones(3))


def test_cg_maxit_returns_flagged_best_iterate():
    A = _kII(6)
    b = np.ones(A.n)
    with pytest.warns(RuntimeWarning):
        x, st_ = cg_solve(A, b, maxit=3)
    assert not st_.converged and st_.iterations == 3
    assert np.linalg.norm(b - A @ x) / np.linalg.norm(b) == pytest.approx(st_.final_relative_residual)


def test_solve_multi_failure_names_column():
    A = _kII(6)
    B = np.zeros((A.n, 3))
    B[:, 2] = 1.0
    with pytest.raises(ConvergenceError) as exc:
        solve_multi(A, B, maxit=2)
    assert exc.value.column == 2


def test_solve_multi_batch_of_one_equals_cg():
    A = _kII(5)
    b = np.random.default_rng(2).normal(size=A.n)
    X, _ = solve_multi(A, b[:, None])
    x, _ = cg_solve(A, b)
    assert np.array_equal(X[:, 0], x)


def test_solve_multi_linearity():
    A = _kII(4)
    k = 6
    E = np.eye(A.n)[:, :k]
    X, _ = solve_multi(A, E, tol=1e-12)
    c = np.random.default_rng(3).normal(size=k)
    y, _ = cg_solve(A, E @ c, tol=1e-12)
    assert np.linalg.norm(y - X @ c) <= 3e-12 * np.linalg.norm(y) * np.linalg.cond(A.to_dense())


@given(st.permutations(list(range(8))), st.integers(1, 8), st.integers(1, 3))
def test_solve_multi_bitwise_independent_of_order_chunk_threads(perm, chunk, threads):
    A = _kII(4, 2)
    B = np.random.default_rng(4).normal(size=(A.n, 8))
    X, _ = solve_multi(A, B)
    perm = np.array(perm)
    Y, _ = solve_multi(A, B[:, perm], chunk=chunk, threads=threads)
    assert np.array_equal(Y, X[:, perm])


def test_dense_solve_examples():
    b = np.arange(4.0)
    assert np.array_equal(dense_solve(np.eye(4), b), b)
    assert np.allclose(dense_solve([[2.0, 1], [1, 2]], [3.0, 3]), [1, 1], atol=1e-15)
    H = scipy.linalg.hilbert(6)
    Hinv = scipy.linalg.invhilbert(6)
    X = dense_solve(H, np.eye(6))
    assert (np.abs(X - Hinv) / np.abs(Hinv)).max() <= 1e-6
    with pytest.raises(SingularMatrixError):
        dense_solve(np.ones((3, 3)), np.ones(3))
    with pytest.raises(ValueError):
        dense_solve(np.eye(2001), np.ones(2001))


def test_export_coo(tmp_path):
    A = _random_spd(10)
    p = tmp_path / "a.txt"
    A.export_coo(p)
    lines = [l for l in p.read_text().splitlines() if not l.startswith("#")]
    assert len(lines) == A.nnz
    D = np.zeros((10, 10))
    for l in lines:
        i, j, v = l.split()
        D[int(i), int(j)] = float(v)
    assert np.array_equal(D, A.to_dense())


def test_jacobi_iterations_grow_like_inverse_h():
    its = []
    for n in (4, 8, 16):
        A = _kII(n)
        _, st_ = cg_solve(A, np.random.default_rng(n).normal(size=A.n))
        its.append(st_.iterations)
    # roughly doubling per halving of h (reported growth, loose band)
    assert 1.4 <= its[2] / its[1] <= 2.8
