from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from wmplab.assembly import (assemble_grad_load, assemble_load, assemble_stiffness, element_errors,
                             error_norms, mass_matrix_local, split_dofs)
from wmplab.errors import EmptyInteriorError
from wmplab.fe import FeFunction, build_space, interpolate_nodal
from wmplab.mesh import boundary_layer, generate_structured, refine


def _dense_p1_stiffness(mesh):
    """Independent oracle: P1 stiffness from explicit gradient formulas."""
    n = mesh.n_vertices
    K = np.zeros((n, n))
    for t in mesh.tets:
        p = mesh.vertices[t]
        M = np.hstack([np.ones((4, 1)), p])
        C = np.linalg.inv(M)  # columns: coefficients of the barycentric functions
        G = C[1:].T
        vol = abs(np.linalg.det(M)) / 6
        K[np.ix_(t, t)] += vol * G @ G.T
    return K


def test_reference_tet_entries(ref_tet):
    K = assemble_stiffness(build_space(ref_tet, 1)).to_dense()
    assert K[0, 0] == pytest.approx(0.5, abs=1e-15)
    assert K[0, 1] == pytest.approx(-1 / 6, abs=1e-15)
    assert np.allclose(assemble_load(build_space(ref_tet, 1), lambda x: np.ones(len(x))), 1 / 24,
                       atol=1e-16)


@pytest.mark.parametrize("domain", ["unit_cube", "prism"])
def test_p1_stiffness_matches_dense_oracle(domain):
    m = generate_structured(domain, 3)
    K = assemble_stiffness(build_space(m, 1)).to_dense()
    assert np.abs(K - _dense_p1_stiffness(m)).max() <= 1e-13


@pytest.mark.parametrize("r", [1, 2])
@pytest.mark.parametrize("domain", ["unit_cube", "prism"])
def test_stiffness_symmetric_zero_rowsum_spd(r, domain, rng):
    s = build_space(generate_structured(domain, 3), r)
    K = assemble_stiffness(s)
    D = K.to_dense()
    assert np.abs(D - D.T).max() == 0.0
    assert np.abs(D.sum(axis=1)).max() <= 1e-12
    K_II, K_IB = split_dofs(s)
    A = K_II.to_dense()
    for _ in range(100):
        x = rng.normal(size=A.shape[0])
        assert x @ A @ x > 0
    assert np.abs(A.sum(axis=1) + K_IB.to_dense().sum(axis=1)).max() <= 1e-12
    ci = K.csr.indices
    for i in range(K.n):
        row = ci[K.row_offsets[i]:K.row_offsets[i + 1]]
        assert (np.diff(row) > 0).all()


def test_p2_stiffness_exact_for_quadratics():
    # (grad u, grad v) for u = x^2, v = y^2 - z^2 ... integrals computed in closed form
    s = build_space(generate_structured("unit_cube", 2), 2)
    K = assemble_stiffness(s)
    u = interpolate_nodal(s, lambda x: x[:, 0] ** 2 + x[:, 1] * x[:, 2])
    # |grad u|^2 = 4x^2 + z^2 + y^2 -> integral 4/3 + 1/3 + 1/3 = 2
    assert u.coeffs @ (K.csr @ u.coeffs) == pytest.approx(2.0, abs=1e-12)


def test_assembly_is_deterministic():
    s1 = build_space(generate_structured("unit_cube", 4), 2)
    s2 = build_space(generate_structured("unit_cube", 4), 2)
    A, B = assemble_stiffness(s1), assemble_stiffness(s2)
    assert np.array_equal(A.values, B.values) and np.array_equal(A.col_indices, B.col_indices)
    f = lambda x: np.sin(x[:, 0]) * x[:, 1]
    assert np.array_equal(assemble_load(s1, f), assemble_load(s2, f))


def test_load_partition_of_unity():
    for domain, vol in (("unit_cube", 1.0), ("prism", 0.5)):
        for r in (1, 2):
            s = build_space(generate_structured(domain, 3), r)
            assert assemble_load(s, lambda x: np.ones(len(x))).sum() == pytest.approx(vol, abs=1e-12)


def test_grad_load_matches_stiffness_times_coefficients():
    s = build_space(generate_structured("unit_cube", 3), 1)
    K = assemble_stiffness(s)
    u = interpolate_nodal(s, lambda x: x[:, 0])
    g = assemble_grad_load(s, lambda x: np.tile([1.0, 0, 0], (len(x), 1)))
    assert np.abs(g - K.csr @ u.coeffs).max() <= 1e-12


@given(st.lists(st.floats(-2, 2), min_size=6, max_size=6))
def test_grad_load_consistency_for_zero_trace_members(c):
    # u = bubble-type quadratic in the zero-trace P2 space of cube(2): random interior coefficients
    s = build_space(generate_structured("unit_cube", 2), 2)
    rng = np.random.default_rng(abs(hash(tuple(c))) % 2 ** 32)
    coeffs = np.zeros(s.n_dofs)
    coeffs[s.interior_dofs] = rng.normal(size=len(s.interior_dofs)) * c[0]
    u = FeFunction(s, coeffs)
    K = assemble_stiffness(s)
    g = assemble_grad_load(s, lambda x: u.gradient_at(x))
    assert np.abs(g - K.csr @ coeffs).max() <= 1e-12 * max(1, np.abs(coeffs).max())


def test_split_dofs_cube2_single_unknown():
    s = build_space(generate_structured("unit_cube", 2), 1)
    K_II, K_IB = split_dofs(s)
    assert K_II.shape == (1, 1)
    D = _dense_p1_stiffness(s.mesh)
    assert K_II.to_dense()[0, 0] == pytest.approx(D[13, 13], abs=1e-14)
    with pytest.raises(EmptyInteriorError):
        split_dofs(build_space(generate_structured("unit_cube", 1), 1))


def test_error_norms_closed_forms():
    s = build_space(generate_structured("unit_cube", 2), 2)
    zero = FeFunction(s, np.zeros(s.n_dofs))
    e = error_norms(s, zero, lambda x: x[:, 0], lambda x: np.tile([1.0, 0, 0], (len(x), 1)))
    assert e["h1_semi"] == pytest.approx(1.0, abs=1e-14)
    assert e["l2"] == pytest.approx(1 / math.sqrt(3), abs=1e-14)
    assert e["l1_grad"] == pytest.approx(1.0, abs=1e-14)
    f = interpolate_nodal(s, lambda x: x[:, 0] * x[:, 1])
    e = error_norms(s, f, lambda x: x[:, 0] * x[:, 1], lambda x: np.c_[x[:, 1], x[:, 0], 0 * x[:, 0]])
    assert max(e.values()) <= 1e-12
    e = error_norms(s, f, f)
    assert max(e.values()) == 0.0


def test_error_norm_subset_monotone_and_additive(rng):
    m = generate_structured("unit_cube", 4)
    s = build_space(m, 1)
    f = FeFunction(s, rng.normal(size=s.n_dofs))
    lay = boundary_layer(m, m.h)
    full = error_norms(s, f, lambda x: np.sin(x[:, 0]), lambda x: np.c_[np.cos(x[:, 0]), 0 * x[:, :2]])
    part = error_norms(s, f, lambda x: np.sin(x[:, 0]), lambda x: np.c_[np.cos(x[:, 0]), 0 * x[:, :2]],
                       subset=lay)
    assert part["l1_grad"] <= full["l1_grad"]
    c = element_errors(s, f)
    rest = np.setdiff1d(np.arange(m.n_tets), lay)
    assert c[lay, 2].sum() + c[rest, 2].sum() == pytest.approx(c[:, 2].sum(), rel=1e-14)


def test_error_norms_against_finer_function_by_location(rng):
    m = generate_structured("unit_cube", 2)
    s = build_space(m, 2)
    fine = build_space(refine(m), 2)
    f = FeFunction(s, rng.normal(size=s.n_dofs))
    g = interpolate_nodal(fine, lambda x: f(x))  # same function on the finer space
    e = error_norms(s, f, g)
    assert max(e.values()) <= 1e-11


def test_local_mass_matrix(ref_tet):
    M = mass_matrix_local(1, 1 / 6)
    assert np.allclose(M, (np.ones((4, 4)) + np.eye(4)) / 120)
    M2 = mass_matrix_local(2, 1 / 6)
    assert M2.sum() == pytest.approx(1 / 6)
    assert np.allclose(M2, M2.T)
